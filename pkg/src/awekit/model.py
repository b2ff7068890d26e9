"""Residual acoustic word embedding network: construction, forward pass,
joint word-discrimination + variability-invariant training, embedding
extraction, and model file I/O."""

import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorkit as tk
from .errors import (
    FormatError,
    IncompatibleModelError,
    TooShortError,
    ValidationError,
)
from .features import FeatureSequence

log = logging.getLogger(__name__)

MODEL_MAGIC = b"AWEM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 64
    stage_channels: tuple[int, ...] = (8, 16, 32, 64)
    stage_blocks: tuple[int, ...] = (1, 1, 1, 1)
    stage_downsample: tuple[bool, ...] = (False, True, True, True)
    num_classes_per_language: tuple[int, ...] = (10, 10)
    softmax_mode: str = "one"  # "one" | "block"
    alpha: float = 0.8
    lr0: float = 0.1
    momentum: float = 0.9
    epochs: int = 80
    batch_size: int = 32
    lr_patience: int = 5
    lr_factor: float = 0.5
    min_lr: float = 1e-4
    grad_clip_norm: float = 1.0  # 0 disables clipping
    input_mean_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "stage_blocks", tuple(self.stage_blocks))
        object.__setattr__(self, "stage_downsample", tuple(self.stage_downsample))
        object.__setattr__(
            self, "num_classes_per_language", tuple(self.num_classes_per_language)
        )
        if not (
            len(self.stage_channels) == len(self.stage_blocks) == len(self.stage_downsample) == 4
        ):
            raise ValidationError("stage_channels/blocks/downsample must all have length 4")
        if self.softmax_mode not in ("one", "block"):
            raise ValidationError(f"softmax_mode must be 'one' or 'block', got {self.softmax_mode!r}")
        if self.alpha < 0:
            raise ValidationError(f"alpha must be >= 0, got {self.alpha}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if not 0 < self.lr_factor < 1:
            raise ValidationError(f"lr_factor must be in (0, 1), got {self.lr_factor}")
        if min(self.num_classes_per_language) < 1:
            raise ValidationError("every language needs at least one class")

    @property
    def num_classes(self) -> int:
        return sum(self.num_classes_per_language)

    @property
    def embedding_dim(self) -> int:
        return self.stage_channels[-1]

    @property
    def layout(self) -> tk.BlockLayout:
        if self.softmax_mode == "one":
            return tk.BlockLayout.single(self.num_classes)
        blocks, cursor = [], 0
        for n in self.num_classes_per_language:
            blocks.append((cursor, cursor + n))
            cursor += n
        return tk.BlockLayout(tuple(blocks))

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "stage_channels": list(self.stage_channels),
            "stage_blocks": list(self.stage_blocks),
            "stage_downsample": list(self.stage_downsample),
            "num_classes_per_language": list(self.num_classes_per_language),
            "softmax_mode": self.softmax_mode,
            "alpha": self.alpha,
            "lr0": self.lr0,
            "momentum": self.momentum,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr_patience": self.lr_patience,
            "lr_factor": self.lr_factor,
            "min_lr": self.min_lr,
            "grad_clip_norm": self.grad_clip_norm,
            "input_mean_norm": self.input_mean_norm,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class EpochStats:
    total_loss: float
    ce_loss: float
    mse_loss: float
    accuracy: float
    lr: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epochs": [
                {
                    "total_loss": e.total_loss,
                    "ce_loss": e.ce_loss,
                    "mse_loss": e.mse_loss,
                    "accuracy": e.accuracy,
                    "lr": e.lr,
                }
                for e in self.epochs
            ]
        }


def _he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def build_network(cfg: ModelConfig) -> dict[str, np.ndarray]:
    """He-uniform initialized parameters for the full layer stack.

    Convolutions carry no bias so that zero-padded frames stay exactly
    zero through the network and masked pooling is exact; the final FC
    layer has a (zero-initialized) bias.
    """
    rng = np.random.default_rng(cfg.seed)
    dtype = tk.default_dtype()
    params: dict[str, np.ndarray] = {}

    c0 = cfg.stage_channels[0]
    params["conv1.w"] = _he_uniform(rng, (c0, 1, 7, 7), 1 * 7 * 7).astype(dtype)
    in_ch = c0
    for s, (out_ch, n_blocks) in enumerate(zip(cfg.stage_channels, cfg.stage_blocks)):
        for b in range(n_blocks):
            prefix = f"res{s + 1}.{b}"
            stride_block = b == 0 and cfg.stage_downsample[s]
            block_in = in_ch if b == 0 else out_ch
            params[f"{prefix}.conv1.w"] = _he_uniform(
                rng, (out_ch, block_in, 3, 3), block_in * 9
            ).astype(dtype)
            params[f"{prefix}.conv2.w"] = _he_uniform(
                rng, (out_ch, out_ch, 3, 3), out_ch * 9
            ).astype(dtype)
            if stride_block or block_in != out_ch:
                params[f"{prefix}.proj.w"] = _he_uniform(
                    rng, (out_ch, block_in, 1, 1), block_in
                ).astype(dtype)
        in_ch = out_ch
    d = cfg.embedding_dim
    params["fc.w"] = _he_uniform(rng, (d, cfg.num_classes), d).astype(dtype)
    params["fc.b"] = np.zeros(cfg.num_classes, dtype=dtype)
    return params


def _mask_time(h: tk.Tensor, valid: np.ndarray) -> tk.Tensor:
    """Zero activations past each item's valid length.

    Strided convolutions near the valid/padded boundary mix valid frames
    into positions beyond it; without re-masking, the next layer's valid
    outputs would read those and batch padding would change embeddings.
    """
    t = h.shape[-1]
    if (valid >= t).all():
        return h
    m = (np.arange(t)[None, :] < valid[:, None]).astype(h.value.dtype)[:, None, None, :]
    out = tk.Tensor(h.value * m, (h,))

    def backward(g):
        h._accumulate(g * m)

    out._backward = backward
    return out


def _forward_graph(pt: dict[str, tk.Tensor], cfg: ModelConfig, x: tk.Tensor, valid_t):
    """Shared forward pass over param Tensors; x is [B, 1, D, T]."""
    valid = np.asarray(valid_t, dtype=np.int64)
    h = tk.relu(tk.conv2d(x, pt["conv1.w"], stride=(2, 2), pad=(3, 3)))
    valid = -(-valid // 2)
    h = _mask_time(h, valid)
    h = tk.maxpool2x2(h)
    valid = -(-valid // 2)
    h = _mask_time(h, valid)
    for s, n_blocks in enumerate(cfg.stage_blocks):
        for b in range(n_blocks):
            prefix = f"res{s + 1}.{b}"
            stride = (2, 2) if (b == 0 and cfg.stage_downsample[s]) else (1, 1)
            block_valid = -(-valid // 2) if stride != (1, 1) else valid
            main = tk.relu(tk.conv2d(h, pt[f"{prefix}.conv1.w"], stride=stride, pad=(1, 1)))
            main = _mask_time(main, block_valid)
            main = tk.conv2d(main, pt[f"{prefix}.conv2.w"], stride=(1, 1), pad=(1, 1))
            if f"{prefix}.proj.w" in pt:
                skip = tk.conv2d(h, pt[f"{prefix}.proj.w"], stride=stride, pad=(0, 0))
            else:
                skip = h
            h = tk.relu(main + skip)
            valid = block_valid
            h = _mask_time(h, valid)
    emb = tk.gap_masked(h, valid)
    logits = tk.linear(emb, pt["fc.w"], pt["fc.b"])
    return emb, logits


def _as_param_tensors(params: dict[str, np.ndarray]) -> dict[str, tk.Tensor]:
    return {name: tk.Tensor(p) for name, p in params.items()}


def _batch_array(seqs: list[FeatureSequence], cfg: ModelConfig):
    """Pad sequences with trailing zero frames into a [B, 1, D, T] array."""
    if not seqs:
        raise ValidationError("empty batch")
    dim = seqs[0].dim
    if dim != cfg.input_dim:
        raise ValidationError(f"feature dim {dim} != model input_dim {cfg.input_dim}")
    lens = [s.num_frames for s in seqs]
    if min(lens) < 1:
        raise TooShortError("network minimum input length is 1 frame")
    t_max = max(lens)
    batch = np.zeros((len(seqs), 1, dim, t_max), dtype=tk.default_dtype())
    for i, s in enumerate(seqs):
        frames = s.frames.astype(tk.default_dtype())
        if cfg.input_mean_norm:
            frames = frames - frames.mean(axis=0, keepdims=True)
        batch[i, 0, :, : lens[i]] = frames.T
    return batch, np.asarray(lens, dtype=np.int64)


def forward(params, cfg: ModelConfig, seqs: list[FeatureSequence]):
    """Forward a batch of sequences; returns (embeddings [B,d], logits [B,V])."""
    batch, lens = _batch_array(seqs, cfg)
    pt = _as_param_tensors(params)
    emb, logits = _forward_graph(pt, cfg, tk.Tensor(batch), lens)
    return emb.value.copy(), logits.value.copy()


def extract_embedding(params, cfg: ModelConfig, seq: FeatureSequence) -> np.ndarray:
    """Embedding of a single sequence (GAP-layer output, pre-FC)."""
    emb, _ = forward(params, cfg, [seq])
    return emb[0]


def embed_sequences(params, cfg: ModelConfig, seqs, batch_size=128) -> np.ndarray:
    """Embeddings for many sequences, batched by equal length for speed."""
    out = np.empty((len(seqs), cfg.embedding_dim), dtype=tk.default_dtype())
    order = sorted(range(len(seqs)), key=lambda i: seqs[i].num_frames)
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        emb, _ = forward(params, cfg, [seqs[i] for i in chunk])
        out[chunk] = emb
    return out


def total_loss(outputs1, outputs2, targets1, targets2, e1, e2, alpha, layout, lang1, lang2):
    """Joint objective: CE(anchor) + CE(partner) + alpha * MSE(embeddings).

    Returns (total, ce_sum_value, mse_value) with total a scalar Tensor.
    """
    ce1 = tk.block_cross_entropy(outputs1, layout, lang1, targets1)
    ce2 = tk.block_cross_entropy(outputs2, layout, lang2, targets2)
    l_mse = tk.mse(e1, e2)
    total = ce1 + ce2 + l_mse.scale(alpha)
    return total, float(ce1.value + ce2.value), float(l_mse.value)


def _block_argmax(logits: np.ndarray, layout: tk.BlockLayout, lang) -> np.ndarray:
    pred = np.empty(logits.shape[0], dtype=np.int64)
    for i in range(logits.shape[0]):
        begin, end = layout.blocks[lang[i]]
        pred[i] = begin + int(np.argmax(logits[i, begin:end]))
    return pred


def train(cfg: ModelConfig, instances) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Train the embedding network on labeled word instances.

    Each anchor instance gets one sampled same-word different-speaker
    partner per step; words with a single speaker fall back to
    partner == anchor (zero MSE term).
    """
    instances = list(instances)
    if not instances:
        raise ValidationError("empty training set")
    layout = cfg.layout
    vocab = cfg.num_classes
    for inst in instances:
        if not 0 <= inst.word_id < vocab:
            raise ValidationError(f"word_id {inst.word_id} outside vocabulary [0, {vocab})")

    by_word: dict[int, list[int]] = {}
    for i, inst in enumerate(instances):
        by_word.setdefault(inst.word_id, []).append(i)
    partners: dict[int, list[int]] = {}
    single_speaker_words = set()
    for i, inst in enumerate(instances):
        cands = [j for j in by_word[inst.word_id] if instances[j].speaker_id != inst.speaker_id]
        partners[i] = cands
        if not cands:
            single_speaker_words.add(inst.word_id)
    if single_speaker_words:
        log.warning(
            "words %s have a single speaker; their MSE term degenerates to 0",
            sorted(single_speaker_words),
        )

    rng = np.random.default_rng(cfg.seed)
    params = build_network(cfg)
    velocity = {name: np.zeros_like(p) for name, p in params.items()}
    lr = cfg.lr0
    best_loss = np.inf
    stale = 0
    report = TrainReport()

    n = len(instances)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        ep_total = ep_ce = ep_mse = 0.0
        correct = 0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            anchor_idx = perm[start : start + cfg.batch_size]
            partner_idx = np.array(
                [
                    partners[i][int(rng.integers(0, len(partners[i])))] if partners[i] else i
                    for i in anchor_idx
                ]
            )
            anchors = [instances[i] for i in anchor_idx]
            mates = [instances[i] for i in partner_idx]
            pt = _as_param_tensors(params)
            b1, l1 = _batch_array([a.features for a in anchors], cfg)
            b2, l2 = _batch_array([m.features for m in mates], cfg)
            e1, out1 = _forward_graph(pt, cfg, tk.Tensor(b1), l1)
            e2, out2 = _forward_graph(pt, cfg, tk.Tensor(b2), l2)
            t1 = np.array([a.word_id for a in anchors])
            t2 = np.array([m.word_id for m in mates])
            g1 = np.array([a.language_id if cfg.softmax_mode == "block" else 0 for a in anchors])
            g2 = np.array([m.language_id if cfg.softmax_mode == "block" else 0 for m in mates])
            loss, ce_val, mse_val = total_loss(
                out1, out2, t1, t2, e1, e2, cfg.alpha, layout, g1, g2
            )
            if not np.isfinite(loss.value):
                raise ValidationError(
                    f"non-finite loss {loss.value} at epoch {epoch}, batch {n_batches}"
                )
            loss.backward()
            grads = {name: pt[name].grad for name in params}
            if cfg.grad_clip_norm > 0:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > cfg.grad_clip_norm:
                    scale = cfg.grad_clip_norm / norm
                    for g in grads.values():
                        g *= scale
            tk.sgd_nesterov_step(params, grads, velocity, lr, cfg.momentum)
            ep_total += float(loss.value)
            ep_ce += ce_val
            ep_mse += mse_val
            correct += int((_block_argmax(out1.value, layout, g1) == t1).sum())
            n_batches += 1
        mean_loss = ep_total / n_batches
        report.epochs.append(
            EpochStats(
                total_loss=mean_loss,
                ce_loss=ep_ce / n_batches,
                mse_loss=ep_mse / n_batches,
                accuracy=correct / n,
                lr=lr,
            )
        )
        if mean_loss < best_loss - 1e-6:
            best_loss = mean_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.lr_patience and lr > cfg.min_lr:
                lr = max(cfg.min_lr, lr * cfg.lr_factor)
                stale = 0
    return params, report


def save_model(params: dict[str, np.ndarray], cfg: ModelConfig, path) -> None:
    """Binary model file: magic, version, config JSON, named f32 tensors."""
    cfg_blob = json.dumps(cfg.to_dict(), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<I", MODEL_VERSION))
        f.write(struct.pack("<I", len(cfg_blob)))
        f.write(cfg_blob)
        f.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            enc = name.encode()
            f.write(struct.pack("<I", len(enc)))
            f.write(enc)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_model(path):
    """Load (params, cfg) from a model file, validating against the config."""
    path = Path(path)
    raw = path.read_bytes()
    view = memoryview(raw)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(raw):
            raise FormatError(f"model file {path} truncated at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MODEL_MAGIC:
        raise FormatError(f"model file {path}: bad magic")
    (version,) = struct.unpack("<I", take(4))
    if version != MODEL_VERSION:
        raise FormatError(f"model file {path}: unsupported version {version}")
    (cfg_len,) = struct.unpack("<I", take(4))
    cfg = ModelConfig.from_dict(json.loads(bytes(take(cfg_len)).decode()))
    (count,) = struct.unpack("<I", take(4))
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode()
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).copy()
        params[name] = data
    expected = build_network(cfg)
    if set(expected) != set(params):
        raise IncompatibleModelError(
            f"model file {path}: tensor names do not match config "
            f"(missing {sorted(set(expected) - set(params))}, "
            f"extra {sorted(set(params) - set(expected))})"
        )
    for name, ref in expected.items():
        if params[name].shape != ref.shape:
            raise IncompatibleModelError(
                f"model file {path}: tensor {name} has shape {params[name].shape}, "
                f"config implies {ref.shape}"
            )
    return params, cfg
