"""Reference predictors: random train-mesh retrieval and feature-space KNN.

Both return (predicted mesh, truth mesh) pairs in the shared unit-lattice
evaluation frame, ready for evaluate_batch, and are deterministic given
their seed and manifests.
"""

from __future__ import annotations

import numpy as np

from . import engine
from .errors import EmptyInput
from .geometry import Mesh, dequantize, normalize_to_unit_cube, quantize
from .meshio import read_obj, read_pgm
from .synthroof import DatasetManifest


def eval_frame_mesh(path) -> Mesh:
    """Mesh mapped into the canonical unit-lattice frame used for scoring."""
    return dequantize(quantize(normalize_to_unit_cube(read_obj(path))))


def _split_meshes(manifest: DatasetManifest, split: str) -> list[Mesh]:
    entries = manifest.split(split)
    return [eval_frame_mesh(manifest.resolve(e.mesh)) for e in entries]


def random_baseline(test_manifest: DatasetManifest,
                    train_manifest: DatasetManifest, seed: int):
    """Each test mesh is 'predicted' by a uniformly random train mesh."""
    test = _split_meshes(test_manifest, "test")
    train = _split_meshes(train_manifest, "train")
    if not test or not train:
        raise EmptyInput("random baseline needs non-empty test and train splits")
    rng = engine.rng_stream(seed, "random-baseline")
    picks = rng.integers(0, len(train), size=len(test))
    return [(train[p], truth) for p, truth in zip(picks, test)]


def _block_average_features(manifest: DatasetManifest, split: str) -> np.ndarray:
    """Flattened block-averaged pixels, 8x8 when the resolution allows."""
    feats = []
    for entry in manifest.split(split):
        px = read_pgm(manifest.resolve(entry.image)).pixels
        h, w = px.shape
        f = max(1, h // 8)
        hc, wc = (h // f) * f, (w // f) * f
        pooled = px[:hc, :wc].reshape(hc // f, f, wc // f, f).mean(axis=(1, 3))
        feats.append(pooled.reshape(-1))
    return np.array(feats)


def _encoder_features(manifest: DatasetManifest, split: str, model) -> np.ndarray:
    feats = []
    entries = manifest.split(split)
    for lo in range(0, len(entries), 64):
        chunk = entries[lo : lo + 64]
        images = np.stack(
            [read_pgm(manifest.resolve(e.image)).pixels[None] for e in chunk])
        emb = model.encode_image(images).data  # (B, cells, hidden)
        feats.append(emb.mean(axis=1))
    return np.concatenate(feats, axis=0)


def feature_knn_baseline(test_manifest: DatasetManifest,
                         train_manifest: DatasetManifest,
                         encoder_model=None, k: int = 1):
    """Nearest-train-neighbor retrieval in image feature space.

    Features come from a trained encoder when one is given, otherwise from
    block-averaged raw pixels. With k > 1 the prediction is the medoid of
    the k nearest neighbors; ties break toward the lowest train index.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    test_meshes = _split_meshes(test_manifest, "test")
    train_meshes = _split_meshes(train_manifest, "train")
    if not test_meshes or not train_meshes:
        raise EmptyInput("knn baseline needs non-empty test and train splits")

    if encoder_model is not None:
        test_f = _encoder_features(test_manifest, "test", encoder_model)
        train_f = _encoder_features(train_manifest, "train", encoder_model)
    else:
        test_f = _block_average_features(test_manifest, "test")
        train_f = _block_average_features(train_manifest, "train")
    if test_f.shape[1] != train_f.shape[1]:
        from .errors import ShapeError
        raise ShapeError(
            f"feature dims differ: test {test_f.shape[1]} vs train {train_f.shape[1]}")

    pairs = []
    for i, truth in enumerate(test_meshes):
        dists = np.linalg.norm(train_f - test_f[i], axis=1)
        kk = min(k, len(train_meshes))
        # stable ascending order; equal distances keep index order
        neighbors = np.argsort(dists, kind="stable")[:kk]
        if kk == 1:
            pick = int(neighbors[0])
        else:
            sub = train_f[neighbors]
            cost = np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=-1).sum(axis=1)
            pick = int(neighbors[np.argmin(cost)])  # argmin is first minimum
        pairs.append((train_meshes[pick], truth))
    return pairs
