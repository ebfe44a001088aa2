"""Conditional roof-mesh model: image encoder, autoregressive vertex decoder,
vertex-conditioned pointer-network face decoder, and nucleus sampling.

The vertex decoder models p(vertex tokens | image); the face decoder models
p(face tokens | vertices) and never sees the image. For a token array of
length L, logits row t is the distribution of token t given tokens < t
(inputs are shifted right behind a learned start slot), so teacher forcing
and next-token sampling share one forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine, nn, tokenizer
from .engine import Tensor
from .errors import DegenerateSample, GrammarError, LimitExceeded, ShapeError
from .geometry import ImageGrid, Mesh
from .nn import NEG_INF, ParamStore
from .tokenizer import (
    FACE_NEWFACE,
    FACE_OFFSET,
    FACE_STOP,
    VERTEX_STOP,
    VERTEX_VOCAB,
    SequenceLimits,
)


@dataclass(frozen=True)
class StackConfig:
    layers: int
    heads: int
    feedforward_dim: int


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 128
    vertex_decoder: StackConfig = StackConfig(3, 4, 256)
    face_encoder: StackConfig = StackConfig(2, 4, 256)
    face_decoder: StackConfig = StackConfig(2, 4, 256)
    dropout_image_encoder: float = 0.1
    dropout_vertex_decoder_and_face_encoder: float = 0.1
    dropout_face_decoder: float = 0.1
    image_resolution: int = 32
    image_encoder_blocks: int = 3
    image_encoder_base_channels: int = 16
    face_encoder_positions: bool = True
    vertex_position_slots: int = 104
    face_position_slots: int = 1604

    def __post_init__(self):
        for stack in (self.vertex_decoder, self.face_encoder, self.face_decoder):
            if stack.layers <= 0 or stack.heads <= 0 or stack.feedforward_dim <= 0:
                raise ValueError("stack dims must be positive")
            if self.hidden_dim % stack.heads:
                raise ValueError(
                    f"heads ({stack.heads}) must divide hidden_dim ({self.hidden_dim})")

    def to_dict(self) -> dict:
        return {
            "hidden_dim": self.hidden_dim,
            "vertex_decoder": vars(self.vertex_decoder).copy(),
            "face_encoder": vars(self.face_encoder).copy(),
            "face_decoder": vars(self.face_decoder).copy(),
            "dropout_image_encoder": self.dropout_image_encoder,
            "dropout_vertex_decoder_and_face_encoder":
                self.dropout_vertex_decoder_and_face_encoder,
            "dropout_face_decoder": self.dropout_face_decoder,
            "image_resolution": self.image_resolution,
            "image_encoder_blocks": self.image_encoder_blocks,
            "image_encoder_base_channels": self.image_encoder_base_channels,
            "face_encoder_positions": self.face_encoder_positions,
            "vertex_position_slots": self.vertex_position_slots,
            "face_position_slots": self.face_position_slots,
        }

    @staticmethod
    def from_dict(doc: dict) -> "ModelConfig":
        doc = dict(doc)
        for key in ("vertex_decoder", "face_encoder", "face_decoder"):
            doc[key] = StackConfig(**doc[key])
        return ModelConfig(**doc)


@dataclass(frozen=True)
class TrainSchedule:
    max_epochs: int = 25
    patience: int = 5
    batch_size: int = 32
    learning_rate: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.99
    seed: int = 0
    mode: str = "joint"  # or "separate"
    max_steps: int | None = None  # cap on optimizer steps; disables early stop

    def __post_init__(self):
        if self.mode not in ("joint", "separate"):
            raise ValueError(f"unknown training mode {self.mode!r}")


def preset(name: str, image_resolution: int | None = None):
    """Named (ModelConfig, TrainSchedule) presets: desk-scale toy and the
    full-size training recipe."""
    if name == "toy":
        cfg = ModelConfig()
        sched = TrainSchedule(learning_rate=1e-3)
    elif name == "paper":
        cfg = ModelConfig(
            hidden_dim=512,
            vertex_decoder=StackConfig(5, 4, 1024),
            face_encoder=StackConfig(3, 4, 512),
            face_decoder=StackConfig(4, 4, 512),
            dropout_image_encoder=0.4,
            dropout_vertex_decoder_and_face_encoder=0.3,
            dropout_face_decoder=0.2,
        )
        sched = TrainSchedule(learning_rate=2e-5)
    else:
        raise ValueError(f"unknown preset {name!r} (expected 'toy' or 'paper')")
    if image_resolution is not None:
        cfg = replace(cfg, image_resolution=image_resolution)
    return cfg, sched


@dataclass(frozen=True)
class SamplerConfig:
    nucleus_p: float = 0.95
    max_vertex_tokens: int = 100
    max_face_tokens: int = 1600
    grammar_mask: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ValueError(f"nucleus_p must be in (0, 1], got {self.nucleus_p}")


_SLOT_CAP = 32  # in-face position ids; larger polygons share the last slot


def _in_face_slots(tokens: np.ndarray) -> np.ndarray:
    """Pointer index of each token within its face; specials get _SLOT_CAP."""
    slots = np.full(tokens.shape, _SLOT_CAP, dtype=np.int64)
    for b in range(tokens.shape[0]):
        count = 0
        for t, tok in enumerate(tokens[b]):
            if tok >= FACE_OFFSET:
                slots[b, t] = min(count, _SLOT_CAP - 1)
                count += 1
            else:
                count = 0
    return slots


class RoofModel:
    """Parameter container plus the forward passes.

    Parameters materialize lazily on first use with deterministic named
    initialization, so two models built with the same seed and config are
    bitwise identical once exercised.
    """

    def __init__(self, config: ModelConfig, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.store = ParamStore(seed)
        if params is not None:
            self.store.params = params

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    # -- image encoder --------------------------------------------------

    def encode_image(self, images: np.ndarray, train: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        """images (B, 1, R, R) in [0, 1] -> embeddings (B, cells, hidden)."""
        cfg = self.config
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 2:
            images = images[None, None]
        if images.ndim != 4 or images.shape[2] != cfg.image_resolution \
                or images.shape[3] != cfg.image_resolution:
            raise ShapeError(
                f"expected (B, 1, {cfg.image_resolution}, {cfg.image_resolution}) "
                f"images, got {images.shape}")
        store = self.store
        x = Tensor(images)
        c = cfg.image_encoder_base_channels
        w = store.fan_in("img.stem.w", 9, c, 1, 3, 3)
        b = store.constant("img.stem.b", 0.0, c)
        x = engine.gelu(engine.conv2d(x, w, b, stride=1, pad=1))
        ch = c
        for i in range(cfg.image_encoder_blocks):
            out_ch = min(ch * 2, 64)
            x = self._res_block(f"img.block{i}", x, ch, out_ch)
            ch = out_ch
        bsz, _, h, wid = x.shape
        cells = h * wid
        x = engine.reshape(x, (bsz, ch, cells))
        x = engine.transpose(x, (0, 2, 1))  # (B, cells, ch)
        coord = store.normal("img.coord", cells, ch)
        x = engine.add(x, coord)
        x = nn.linear(store, "img.proj", x, ch, cfg.hidden_dim)
        # fixed scale into cross-attention regardless of encoder depth
        x = nn.layer_norm(store, "img.final_ln", x, cfg.hidden_dim)
        if train and cfg.dropout_image_encoder > 0:
            x = engine.dropout(x, cfg.dropout_image_encoder, True, rng)
        return x

    def _res_block(self, name: str, x: Tensor, ch_in: int, ch_out: int) -> Tensor:
        store = self.store
        w1 = store.fan_in(f"{name}.c1.w", 9 * ch_in, ch_out, ch_in, 3, 3)
        b1 = store.constant(f"{name}.c1.b", 0.0, ch_out)
        w2 = store.fan_in(f"{name}.c2.w", 9 * ch_out, ch_out, ch_out, 3, 3)
        b2 = store.constant(f"{name}.c2.b", 0.0, ch_out)
        wp = store.fan_in(f"{name}.skip.w", ch_in, ch_out, ch_in, 1, 1)
        h = engine.gelu(engine.conv2d(x, w1, b1, stride=2, pad=1))
        h = engine.conv2d(h, w2, b2, stride=1, pad=1)
        skip = engine.conv2d(x, wp, stride=2, pad=0)
        return engine.gelu(engine.add(h, skip))

    # -- vertex decoder ---------------------------------------------------

    def vertex_logits(self, tokens: np.ndarray, image_emb: Tensor,
                      train: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """tokens (B, L) -> logits (B, L, 257); row t conditions on tokens < t."""
        cfg = self.config
        store = self.store
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        bsz, length = tokens.shape
        if length + 1 > cfg.vertex_position_slots:
            raise LimitExceeded(
                f"vertex sequence length {length} exceeds the decoder's "
                f"{cfg.vertex_position_slots - 1} positions",
                observed=length, limit=cfg.vertex_position_slots - 1)
        dim = cfg.hidden_dim

        e_token = store.normal("vdec.e_token", VERTEX_VOCAB, dim)
        e_dim = store.normal("vdec.e_dim", 3, dim)
        e_pos = store.normal("vdec.e_pos", cfg.vertex_position_slots, dim)
        start = store.normal("vdec.start", 1, 1, dim)

        # shifted inputs: row 0 is the start slot, row t >= 1 embeds token t-1
        # tagged with its coordinate axis (z, y, x cycle)
        prev = np.clip(tokens[:, : length - 1], 0, VERTEX_VOCAB - 1)
        parts = [engine.add(start, Tensor(np.zeros((bsz, 1, dim))))]
        if length > 1:
            tok_emb = engine.embedding_lookup(e_token, prev)
            axes = np.arange(length - 1) % 3
            dim_emb = engine.embedding_lookup(e_dim, np.broadcast_to(axes, (bsz, length - 1)))
            parts.append(engine.add(tok_emb, dim_emb))
        x = engine.concat(parts, axis=1)
        pos = engine.embedding_lookup(e_pos, np.broadcast_to(np.arange(length), (bsz, length)))
        x = engine.add(x, pos)

        drop = cfg.dropout_vertex_decoder_and_face_encoder
        mask = nn.causal_mask(length)
        for i in range(cfg.vertex_decoder.layers):
            x = nn.transformer_block(
                store, f"vdec.block{i}", x, dim, cfg.vertex_decoder.heads,
                cfg.vertex_decoder.feedforward_dim, self_mask=mask,
                cross=image_emb, drop=drop, train=train, rng=rng)
        x = nn.layer_norm(store, "vdec.final_ln", x, dim)
        return nn.linear(store, "vdec.head", x, dim, VERTEX_VOCAB)

    # -- face model -------------------------------------------------------

    def vertex_context(self, vertices: np.ndarray, valid: np.ndarray,
                       train: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Contextual embeddings of the vertex list, (B, Nv, hidden)."""
        cfg = self.config
        store = self.store
        vertices = np.asarray(vertices, dtype=np.int64)
        if vertices.ndim == 2:
            vertices = vertices[None]
        bsz, nv, _ = vertices.shape
        dim = cfg.hidden_dim

        safe = np.clip(vertices, 0, 255)
        emb = engine.embedding_lookup(store.normal("fenc.e_x", 256, dim), safe[..., 0])
        emb = engine.add(emb, engine.embedding_lookup(
            store.normal("fenc.e_y", 256, dim), safe[..., 1]))
        emb = engine.add(emb, engine.embedding_lookup(
            store.normal("fenc.e_z", 256, dim), safe[..., 2]))
        if cfg.face_encoder_positions:
            e_pos = store.normal("fenc.e_pos", cfg.vertex_position_slots, dim)
            emb = engine.add(emb, engine.embedding_lookup(
                e_pos, np.broadcast_to(np.arange(nv), (bsz, nv))))

        pad_mask = nn.key_padding_mask(valid)
        drop = cfg.dropout_vertex_decoder_and_face_encoder
        x = emb
        for i in range(cfg.face_encoder.layers):
            x = nn.transformer_block(
                store, f"fenc.block{i}", x, dim, cfg.face_encoder.heads,
                cfg.face_encoder.feedforward_dim, self_mask=pad_mask,
                drop=drop, train=train, rng=rng)
        return nn.layer_norm(store, "fenc.final_ln", x, dim)

    def face_logits(self, tokens: np.ndarray, vertices: np.ndarray,
                    valid: np.ndarray | None = None, train: bool = False,
                    rng: np.random.Generator | None = None,
                    context: Tensor | None = None) -> Tensor:
        """tokens (B, L) -> logits (B, L, Nv + 2) over [STOP, NEWFACE, pointers].

        Pointer logits are dot products with the contextual vertex
        embeddings, so the distribution tracks the input vertex list.
        """
        cfg = self.config
        store = self.store
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        vertices = np.asarray(vertices, dtype=np.int64)
        if vertices.ndim == 2:
            vertices = vertices[None]
        bsz, length = tokens.shape
        nv = vertices.shape[1]
        if valid is None:
            valid = np.ones((bsz, nv), dtype=bool)
        if length + 1 > cfg.face_position_slots:
            raise LimitExceeded(
                f"face sequence length {length} exceeds the decoder's "
                f"{cfg.face_position_slots - 1} positions",
                observed=length, limit=cfg.face_position_slots - 1)
        if tokens.max(initial=0) >= nv + FACE_OFFSET:
            raise GrammarError("face token points past the vertex list")
        dim = cfg.hidden_dim

        if context is None:
            context = self.vertex_context(vertices, valid, train=train, rng=rng)

        e_stop = store.normal("fdec.e_stop", 1, 1, dim)
        e_new = store.normal("fdec.e_newface", 1, 1, dim)
        start = store.normal("fdec.start", 1, 1, dim)
        e_pos = store.normal("fdec.e_pos", cfg.face_position_slots, dim)
        e_slot = store.normal("fdec.e_slot", _SLOT_CAP + 1, dim)

        zeros = Tensor(np.zeros((bsz, 1, dim)))
        parts = [engine.add(start, zeros)]
        if length > 1:
            prev = tokens[:, : length - 1]
            ptr = np.clip(prev - FACE_OFFSET, 0, nv - 1)
            rows = np.broadcast_to(np.arange(bsz)[:, None], ptr.shape)
            gathered = context[rows, ptr]  # (B, L-1, dim)
            is_ptr = Tensor((prev >= FACE_OFFSET)[..., None].astype(float))
            is_stop = Tensor((prev == FACE_STOP)[..., None].astype(float))
            is_new = Tensor((prev == FACE_NEWFACE)[..., None].astype(float))
            emb = engine.multiply(gathered, is_ptr)
            emb = engine.add(emb, engine.multiply(e_stop, is_stop))
            emb = engine.add(emb, engine.multiply(e_new, is_new))
            # position within the current face plays the role the coordinate
            # axis plays for vertices
            emb = engine.add(emb, engine.embedding_lookup(
                e_slot, _in_face_slots(prev)))
            parts.append(emb)
        x = engine.concat(parts, axis=1)
        pos = engine.embedding_lookup(e_pos, np.broadcast_to(np.arange(length), (bsz, length)))
        x = engine.add(x, pos)

        causal = nn.causal_mask(length)
        cross_mask = nn.key_padding_mask(valid)
        drop = cfg.dropout_face_decoder
        for i in range(cfg.face_decoder.layers):
            x = nn.transformer_block(
                store, f"fdec.block{i}", x, dim, cfg.face_decoder.heads,
                cfg.face_decoder.feedforward_dim, self_mask=causal,
                cross=context, cross_mask=cross_mask,
                drop=drop, train=train, rng=rng)
        x = nn.layer_norm(store, "fdec.final_ln", x, dim)

        # decoupled pointer attention: the same context rows act as decoder
        # inputs and as output keys, so the keys get their own projection
        keys = nn.linear(store, "fdec.key", context, dim, dim, bias=False)
        pointer_logits = engine.matmul(x, engine.transpose(keys, (0, 2, 1)))
        pointer_logits = engine.multiply(pointer_logits, 1.0 / np.sqrt(dim))
        invalid = np.where(valid[:, None, :], 0.0, NEG_INF)
        pointer_logits = engine.add(pointer_logits, Tensor(invalid))
        special_logits = nn.linear(store, "fdec.special_head", x, dim, 2)
        return engine.concat([special_logits, pointer_logits], axis=-1)

    # -- losses -----------------------------------------------------------

    def batch_losses(self, batch: dict, train: bool = False,
                     rng: np.random.Generator | None = None):
        """(vertex_loss, face_loss): mean per-token cross entropies."""
        image_emb = self.encode_image(batch["images"], train=train, rng=rng)
        vlogits = self.vertex_logits(batch["vertex_tokens"], image_emb,
                                     train=train, rng=rng)
        vloss = engine.cross_entropy(vlogits, batch["vertex_targets"],
                                     ignore_index=-1)
        flogits = self.face_logits(batch["face_tokens"], batch["vertices"],
                                   batch["vertex_valid"], train=train, rng=rng)
        floss = engine.cross_entropy(flogits, batch["face_targets"],
                                     ignore_index=-1)
        return vloss, floss


# -- nucleus sampling -------------------------------------------------------

def nucleus_probabilities(probs: np.ndarray, p: float) -> np.ndarray:
    """Keep the smallest probability-sorted prefix with cumulative mass >= p,
    renormalized; the rest get exactly zero."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        return nucleus_probabilities(probs[None], p)[0]
    if p >= 1.0:
        return probs / probs.sum(axis=-1, keepdims=True)
    order = np.argsort(-probs, axis=-1, kind="stable")
    sorted_p = np.take_along_axis(probs, order, axis=-1)
    csum = np.cumsum(sorted_p, axis=-1)
    keep_sorted = np.zeros_like(sorted_p, dtype=bool)
    keep_sorted[..., 0] = True
    keep_sorted[..., 1:] = csum[..., :-1] < p
    keep = np.zeros_like(keep_sorted)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    filtered = np.where(keep, probs, 0.0)
    total = filtered.sum(axis=-1, keepdims=True)
    return filtered / total


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _draw(probs: np.ndarray, u: float) -> int:
    return int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right").clip(0, len(probs) - 1))


@dataclass
class SampleResult:
    mesh: Mesh
    vertex_tokens: np.ndarray
    face_tokens: np.ndarray
    degenerate: bool = False  # fewer than 3 vertices; faces skipped
    grammar_ok: bool = True  # decoded without salvage


def sample_batch(model: RoofModel, images: list[ImageGrid] | np.ndarray,
                 sampler: SamplerConfig, limits: SequenceLimits | None = None,
                 row_offset: int = 0) -> list[SampleResult]:
    """Draw one mesh per image. Each row uses its own rng stream keyed by
    (sampler.seed, row_offset + row), so results do not depend on batching."""
    if limits is None:
        limits = SequenceLimits(max_vertex_tokens=sampler.max_vertex_tokens)
    if isinstance(images, np.ndarray) and images.ndim == 4:
        imgs = images
    else:
        imgs = np.stack([np.asarray(g.pixels)[None] for g in images])
    bsz = imgs.shape[0]
    rngs = [engine.rng_stream(sampler.seed, "sample", row_offset + i)
            for i in range(bsz)]
    image_emb = model.encode_image(imgs)

    vertex_tokens = _sample_vertex_sequences(model, image_emb, sampler, limits, rngs)
    results = []
    verts_per_row = []
    for row in range(bsz):
        verts, ok = _salvage_vertices(vertex_tokens[row])
        verts_per_row.append((verts, ok))

    face_tokens = _sample_face_sequences(
        model, [v for v, _ in verts_per_row], sampler, limits, rngs)

    for row in range(bsz):
        verts, v_ok = verts_per_row[row]
        degenerate = len(verts) < 3
        faces = np.zeros((0, 3), dtype=np.int64)
        f_ok = True
        if not degenerate:
            faces, f_ok = _salvage_faces(face_tokens[row], len(verts))
        mesh = Mesh(verts.astype(np.float64) / 255.0, faces)
        results.append(SampleResult(
            mesh=mesh,
            vertex_tokens=vertex_tokens[row],
            face_tokens=face_tokens[row],
            degenerate=degenerate,
            grammar_ok=v_ok and f_ok,
        ))
    return results


def sample(model: RoofModel, image: ImageGrid, sampler: SamplerConfig) -> SampleResult:
    return sample_batch(model, [image], sampler)[0]


def _sample_vertex_sequences(model, image_emb, sampler, limits, rngs):
    bsz = image_emb.shape[0]
    tokens = np.zeros((bsz, 0), dtype=np.int64)
    done = np.zeros(bsz, dtype=bool)
    sequences: list[list[int]] = [[] for _ in range(bsz)]
    budget = min(sampler.max_vertex_tokens, limits.max_vertex_tokens)
    for step in range(budget):
        probe = np.concatenate([tokens, np.zeros((bsz, 1), dtype=np.int64)], axis=1)
        logits = model.vertex_logits(probe, image_emb).data[:, -1, :]
        probs = _softmax_np(logits)
        for row in range(bsz):
            if done[row]:
                continue
            row_probs = probs[row]
            if sampler.grammar_mask:
                mask = tokenizer.valid_next_vertex_tokens(sequences[row], limits)
                row_probs = np.where(mask, row_probs, 0.0)
                total = row_probs.sum()
                if total <= 0.0:  # mask excludes the whole nucleus: force STOP
                    sequences[row].append(VERTEX_STOP)
                    done[row] = True
                    continue
                row_probs = row_probs / total
            row_probs = nucleus_probabilities(row_probs, sampler.nucleus_p)
            tok = _draw(row_probs, rngs[row].random())
            sequences[row].append(tok)
            if tok == VERTEX_STOP:
                done[row] = True
        if done.all():
            break
        step_tokens = np.array(
            [seq[step] if step < len(seq) else 0 for seq in sequences])
        tokens = np.concatenate([tokens, step_tokens[:, None]], axis=1)
    return [np.array(seq, dtype=np.int64) for seq in sequences]


def _salvage_vertices(seq: np.ndarray):
    """Decode a sampled vertex stream, trimming what the grammar rejects."""
    seq = np.asarray(seq, dtype=np.int64)
    ok = True
    stops = np.flatnonzero(seq == VERTEX_STOP)
    if len(stops) == 0:
        seq = np.concatenate([seq, [VERTEX_STOP]])
        ok = False
    elif stops[0] != len(seq) - 1:
        seq = seq[: stops[0] + 1]
        ok = False
    body = seq[:-1]
    if len(body) % 3:
        body = body[: len(body) - len(body) % 3]
        ok = False
    verts = body.reshape(-1, 3)[:, [2, 1, 0]]  # (z,y,x) tokens -> (x,y,z)
    return verts, ok


def _salvage_faces(seq: np.ndarray, n_vertices: int):
    """Decode a sampled face stream; drop malformed or out-of-range faces."""
    try:
        faces = tokenizer.decode_faces(seq, n_vertices)
        distinct = (
            (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2])
            & (faces[:, 0] != faces[:, 2])
        ) if len(faces) else np.zeros(0, dtype=bool)
        if len(faces) and not distinct.all():
            return faces[distinct], False
        return faces, True
    except GrammarError:
        pass
    loops: list[list[int]] = []
    current: list[int] = []
    for tok in seq:
        if tok == FACE_STOP:
            break
        if tok == FACE_NEWFACE:
            if len(current) >= 3:
                loops.append(current)
            current = []
        else:
            idx = int(tok) - FACE_OFFSET
            if 0 <= idx < n_vertices:
                current.append(idx)
    if len(current) >= 3:
        loops.append(current)
    tris = []
    for loop in loops:
        for k in range(1, len(loop) - 1):
            a, b, c = loop[0], loop[k], loop[k + 1]
            if a != b and b != c and a != c:
                tris.append((a, b, c))
    return np.array(tris, dtype=np.int64).reshape(-1, 3), False


def _sample_face_sequences(model, vertex_lists, sampler, limits, rngs):
    bsz = len(vertex_lists)
    counts = [len(v) for v in vertex_lists]
    active_rows = [i for i in range(bsz) if counts[i] >= 3]
    sequences: list[list[int]] = [[] for _ in range(bsz)]
    for i in range(bsz):
        if counts[i] < 3:
            sequences[i] = [FACE_STOP]
    if not active_rows:
        return [np.array(s, dtype=np.int64) for s in sequences]

    nv_max = max(counts[i] for i in active_rows)
    vertices = np.zeros((len(active_rows), nv_max, 3), dtype=np.int64)
    valid = np.zeros((len(active_rows), nv_max), dtype=bool)
    for j, i in enumerate(active_rows):
        vertices[j, : counts[i]] = vertex_lists[i]
        valid[j, : counts[i]] = True
    context = model.vertex_context(vertices, valid)

    tokens = np.zeros((len(active_rows), 0), dtype=np.int64)
    done = np.zeros(len(active_rows), dtype=bool)
    for step in range(sampler.max_face_tokens):
        probe = np.concatenate(
            [tokens, np.zeros((len(active_rows), 1), dtype=np.int64)], axis=1)
        logits = model.face_logits(probe, vertices, valid, context=context)
        logits = logits.data[:, -1, :]
        probs = _softmax_np(logits)
        for j, i in enumerate(active_rows):
            if done[j]:
                continue
            row_probs = probs[j, : counts[i] + FACE_OFFSET]
            if sampler.grammar_mask:
                mask = tokenizer.valid_next_face_tokens(
                    sequences[i], counts[i], limits)
                row_probs = np.where(mask, row_probs, 0.0)
                total = row_probs.sum()
                if total <= 0.0:
                    sequences[i].append(FACE_STOP)
                    done[j] = True
                    continue
                row_probs = row_probs / total
            row_probs = nucleus_probabilities(row_probs, sampler.nucleus_p)
            tok = _draw(row_probs, rngs[i].random())
            sequences[i].append(tok)
            if tok == FACE_STOP:
                done[j] = True
        if done.all():
            break
        step_tokens = np.array(
            [sequences[i][step] if step < len(sequences[i]) else 0
             for i in active_rows])
        tokens = np.concatenate([tokens, step_tokens[:, None]], axis=1)
    for j, i in enumerate(active_rows):
        if not done[j]:
            # budget exhausted: close the stream; salvage drops partial faces
            sequences[i].append(FACE_STOP)
    return [np.array(s, dtype=np.int64) for s in sequences]
