"""Teacher-forced training loop with validation-based early stopping.

Examples are tokenized once up front. Batches are padded; padded target
positions carry -1 and are ignored by the loss, and padded vertex slots are
masked out of the face model's attention and pointer logits.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import dataclass

import numpy as np

from . import engine, nn
from .engine import AdamState, Tensor, adam_step, zero_grads
from .errors import EmptyInput, LimitExceeded
from .geometry import normalize_to_unit_cube, quantize
from .meshio import read_obj, read_pgm
from .model import ModelConfig, RoofModel, TrainSchedule
from .synthroof import DatasetManifest
from .tokenizer import SequenceLimits, encode_faces, encode_vertices


@dataclass(frozen=True)
class Example:
    index: int
    kind: str
    image: np.ndarray  # (1, R, R)
    vertex_tokens: np.ndarray
    face_tokens: np.ndarray
    vertices: np.ndarray  # lattice (Nv, 3)


def load_examples(manifest: DatasetManifest, split: str,
                  limits: SequenceLimits = SequenceLimits()):
    """Tokenized examples for a split; returns (examples, skipped_count)."""
    examples = []
    skipped = 0
    for entry in manifest.split(split):
        mesh = read_obj(manifest.resolve(entry.mesh))
        image = read_pgm(manifest.resolve(entry.image))
        qm = quantize(normalize_to_unit_cube(mesh))
        try:
            vseq = encode_vertices(qm, limits)
            fseq = encode_faces(qm, limits)
        except LimitExceeded:
            skipped += 1
            continue
        examples.append(Example(
            index=entry.index,
            kind=entry.kind,
            image=np.asarray(image.pixels)[None],
            vertex_tokens=vseq,
            face_tokens=fseq,
            vertices=np.asarray(qm.vertices),
        ))
    return examples, skipped


def collate(examples: list[Example], images: np.ndarray | None = None) -> dict:
    """Pad a batch. Optionally substitute a different image array (B, 1, R, R)."""
    bsz = len(examples)
    lv = max(len(e.vertex_tokens) for e in examples)
    lf = max(len(e.face_tokens) for e in examples)
    nv = max(1, max(len(e.vertices) for e in examples))
    vertex_tokens = np.zeros((bsz, lv), dtype=np.int64)
    vertex_targets = np.full((bsz, lv), -1, dtype=np.int64)
    face_tokens = np.zeros((bsz, lf), dtype=np.int64)
    face_targets = np.full((bsz, lf), -1, dtype=np.int64)
    vertices = np.zeros((bsz, nv, 3), dtype=np.int64)
    vertex_valid = np.zeros((bsz, nv), dtype=bool)
    for i, e in enumerate(examples):
        vertex_tokens[i, : len(e.vertex_tokens)] = e.vertex_tokens
        vertex_targets[i, : len(e.vertex_tokens)] = e.vertex_tokens
        face_tokens[i, : len(e.face_tokens)] = e.face_tokens
        face_targets[i, : len(e.face_tokens)] = e.face_tokens
        vertices[i, : len(e.vertices)] = e.vertices
        vertex_valid[i, : len(e.vertices)] = True
    if images is None:
        images = np.stack([e.image for e in examples])
    return {
        "images": images,
        "vertex_tokens": vertex_tokens,
        "vertex_targets": vertex_targets,
        "face_tokens": face_tokens,
        "face_targets": face_targets,
        "vertices": vertices,
        "vertex_valid": vertex_valid,
        "vertex_token_count": int(sum(len(e.vertex_tokens) for e in examples)),
        "face_token_count": int(sum(len(e.face_tokens) for e in examples)),
    }


def evaluate_nll(model: RoofModel, examples, batch_size: int = 32,
                 image_permutation: np.ndarray | None = None):
    """Teacher-forced per-token NLL (vertex, face) in eval mode.

    image_permutation reassigns images across examples, which breaks the
    image conditioning while keeping the marginal image distribution.
    """
    if not examples:
        raise EmptyInput("no examples to evaluate")
    v_total = f_total = 0.0
    v_count = f_count = 0
    for lo in range(0, len(examples), batch_size):
        chunk = examples[lo : lo + batch_size]
        images = None
        if image_permutation is not None:
            rows = image_permutation[lo : lo + len(chunk)]
            images = np.stack([examples[r].image for r in rows])
        batch = collate(chunk, images=images)
        vloss, floss = model.batch_losses(batch, train=False)
        v_total += vloss.item() * batch["vertex_token_count"]
        f_total += floss.item() * batch["face_token_count"]
        v_count += batch["vertex_token_count"]
        f_count += batch["face_token_count"]
    return v_total / v_count, f_total / f_count


@dataclass
class EpochStats:
    epoch: int
    train_nll_vertex: float
    train_nll_face: float
    val_nll_vertex: float
    val_nll_face: float
    wallclock_s: float


@dataclass
class TrainResult:
    model: RoofModel
    history: list[EpochStats]
    checkpoint_path: str | None
    log_path: str | None
    best_val_nll: float
    epochs_run: int


def _loss_for_mode(model, batch, mode, phase, rng):
    vloss, floss = model.batch_losses(batch, train=True, rng=rng)
    if mode == "separate":
        return (vloss, floss, vloss if phase == "vertex" else floss)
    return vloss, floss, engine.add(vloss, floss)


def _phase_params(params: dict, phase: str) -> dict:
    if phase == "vertex":
        return {k: v for k, v in params.items()
                if not k.startswith(("fenc.", "fdec."))}
    if phase == "face":
        return {k: v for k, v in params.items()
                if k.startswith(("fenc.", "fdec."))}
    return params


def _phase_metric(phase: str, val_v: float, val_f: float) -> float:
    if phase == "vertex":
        return val_v
    if phase == "face":
        return val_f
    return val_v + val_f


def train(manifest: DatasetManifest, config: ModelConfig,
          schedule: TrainSchedule = TrainSchedule(),
          limits: SequenceLimits = SequenceLimits(),
          out_dir: str | None = None) -> TrainResult:
    """Maximize joint log-likelihood over the train split; early stop on the
    validation split; checkpoint the best-validation parameters."""
    train_examples, _ = load_examples(manifest, "train", limits)
    val_examples, _ = load_examples(manifest, "val", limits)
    if not train_examples:
        raise EmptyInput("train split is empty")
    if not val_examples:
        raise EmptyInput("val split is empty")

    model = RoofModel(config, seed=schedule.seed)
    phases = ["joint"] if schedule.mode == "joint" else ["vertex", "face"]
    history: list[EpochStats] = []
    best_val = np.inf
    epochs_run = 0
    steps_done = 0
    start = time.monotonic()
    early_stopping = schedule.max_steps is None
    epoch_cap = schedule.max_epochs if early_stopping else 10 ** 9

    for phase in phases:
        state = AdamState(learning_rate=schedule.learning_rate,
                          beta1=schedule.beta1, beta2=schedule.beta2)
        bad_epochs = 0
        best_phase = np.inf
        best_params: dict[str, np.ndarray] | None = None
        for epoch in range(1, epoch_cap + 1):
            order = engine.rng_stream(schedule.seed, "shuffle", phase, epoch
                                      ).permutation(len(train_examples))
            v_total = f_total = 0.0
            v_count = f_count = 0
            for lo in range(0, len(order), schedule.batch_size):
                if schedule.max_steps is not None and steps_done >= schedule.max_steps:
                    break
                rows = order[lo : lo + schedule.batch_size]
                batch = collate([train_examples[r] for r in rows])
                rng = engine.rng_stream(schedule.seed, "dropout", phase, epoch, lo)
                vloss, floss, loss = _loss_for_mode(
                    model, batch, schedule.mode, phase, rng)
                zero_grads(model.params)
                loss.backward()
                adam_step(_phase_params(model.params, phase), state)
                steps_done += 1
                v_total += vloss.item() * batch["vertex_token_count"]
                f_total += floss.item() * batch["face_token_count"]
                v_count += batch["vertex_token_count"]
                f_count += batch["face_token_count"]

            out_of_steps = (schedule.max_steps is not None
                            and steps_done >= schedule.max_steps)
            if early_stopping or out_of_steps:
                val_v, val_f = evaluate_nll(model, val_examples,
                                            schedule.batch_size)
            else:
                val_v = val_f = float("nan")
            epochs_run += 1
            history.append(EpochStats(
                epoch=epochs_run,
                train_nll_vertex=v_total / max(v_count, 1),
                train_nll_face=f_total / max(f_count, 1),
                val_nll_vertex=val_v,
                val_nll_face=val_f,
                wallclock_s=time.monotonic() - start,
            ))
            if early_stopping:
                metric = _phase_metric(phase, val_v, val_f)
                if metric < best_phase - 1e-12:
                    best_phase = metric
                    best_params = {k: v.data.copy()
                                   for k, v in model.params.items()}
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                if bad_epochs >= schedule.patience:
                    break
            if out_of_steps:
                break
        if early_stopping and best_params is not None:
            for k, v in best_params.items():
                model.params[k].data = v

    final_v, final_f = evaluate_nll(model, val_examples, schedule.batch_size)
    best_val = final_v + final_f

    checkpoint_path = log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        checkpoint_path = os.path.join(out_dir, "model.ckpt")
        meta = {
            "config": config.to_dict(),
            "schedule": {
                "max_epochs": schedule.max_epochs,
                "patience": schedule.patience,
                "batch_size": schedule.batch_size,
                "learning_rate": schedule.learning_rate,
                "beta1": schedule.beta1,
                "beta2": schedule.beta2,
                "seed": schedule.seed,
                "mode": schedule.mode,
                "max_steps": schedule.max_steps,
            },
            "init": nn.INIT_RECIPE,
            "seed": schedule.seed,
            "epochs_run": epochs_run,
            "best_val_nll": best_val,
        }
        engine.save_checkpoint(checkpoint_path, model.params, meta)
        log_path = os.path.join(out_dir, "train_log.csv")
        write_history_csv(history, log_path)

    return TrainResult(
        model=model,
        history=history,
        checkpoint_path=checkpoint_path,
        log_path=log_path,
        best_val_nll=float(best_val),
        epochs_run=epochs_run,
    )


def write_history_csv(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_nll_vertex", "train_nll_face",
                         "val_nll_vertex", "val_nll_face", "wallclock_s"])
        for row in history:
            writer.writerow([
                row.epoch, f"{row.train_nll_vertex:.9g}",
                f"{row.train_nll_face:.9g}", f"{row.val_nll_vertex:.9g}",
                f"{row.val_nll_face:.9g}", f"{row.wallclock_s:.3f}"])


def load_model(checkpoint_path) -> tuple[RoofModel, dict]:
    params, meta = engine.load_checkpoint(checkpoint_path)
    config = ModelConfig.from_dict(meta["config"])
    model = RoofModel(config, seed=meta.get("seed", 0), params=params)
    return model, meta
