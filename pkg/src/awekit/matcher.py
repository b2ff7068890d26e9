"""Embedding-space keyword search: sliding-window segmentation, cosine
cost traces, moving-average smoothing, mean template fusion, and ranked
retrieval."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, ValidationError
from .features import FeatureSequence, pad_or_clip
from .model import embed_sequences

# Cost assigned when cosine similarity is undefined (zero-norm vector).
ZERO_NORM_COST = 1.0


@dataclass(frozen=True)
class WindowConfig:
    window_seconds: float = 0.8
    stride_frames: int = 5
    sma_len: int = 5

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ValidationError(f"window_seconds must be > 0, got {self.window_seconds}")
        if self.stride_frames < 1 or self.sma_len < 1:
            raise ValidationError("stride_frames and sma_len must be >= 1")

    def window_frames(self, frame_shift: float) -> int:
        w = int(round(self.window_seconds / frame_shift))
        if w < 1:
            raise ValidationError(
                f"window of {self.window_seconds}s spans no frames at shift {frame_shift}s"
            )
        return w


@dataclass(frozen=True)
class ScoreTrace:
    utterance_id: int
    costs: np.ndarray  # one cost per window position, in [0, 2]
    window_starts: np.ndarray
    zero_norm_seen: bool = False


@dataclass(frozen=True)
class KeywordQuery:
    keyword_id: int
    template_embeddings: np.ndarray  # [n_templates, d]
    fused: np.ndarray  # [d]


@dataclass(frozen=True)
class RankedList:
    keyword_id: int
    entries: tuple[tuple[int, float], ...]  # (utterance_id, score), ascending cost


def window_segments(seq: FeatureSequence, cfg: WindowConfig):
    """Fixed-size windows at regular stride; trailing partials zero-padded.

    Returns a list of (start_frame, FeatureSequence of exactly W frames).
    """
    t = seq.num_frames
    if t < 1:
        raise ValidationError("cannot window an empty sequence")
    w = cfg.window_frames(seq.frame_shift)
    out = []
    for start in range(0, t, cfg.stride_frames):
        window = FeatureSequence(
            frames=seq.frames[start : start + w],
            frame_shift=seq.frame_shift,
            frame_length=seq.frame_length,
        )
        out.append((start, pad_or_clip(window, w)))
    return out


def cosine_cost(x: np.ndarray, ys: np.ndarray):
    """Cosine distance of x against each row of ys.

    Returns (min_cost, argmin_index, trace, zero_norm_seen). Zero-norm
    vectors get cost ZERO_NORM_COST with a warning flag instead of NaN.
    """
    x = np.asarray(x, dtype=np.float64)
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
    if ys.shape[0] == 0:
        raise ValidationError("cosine_cost needs at least one candidate")
    if ys.shape[1] != x.shape[0]:
        raise ShapeError(f"dim mismatch: x has {x.shape[0]}, candidates have {ys.shape[1]}")
    xn = np.linalg.norm(x)
    yn = np.linalg.norm(ys, axis=1)
    degenerate = (xn == 0.0) | (yn == 0.0)
    denom = np.where(degenerate, 1.0, xn * yn)
    trace = 1.0 - (ys @ x) / denom
    trace[degenerate] = ZERO_NORM_COST
    best = int(np.argmin(trace))
    return float(trace[best]), best, trace, bool(degenerate.any())


def sma(trace, k: int) -> np.ndarray:
    """Trailing simple moving average; windows at the head shrink to the
    number of available points."""
    if k < 1:
        raise ValidationError(f"sma window must be >= 1, got {k}")
    trace = np.asarray(trace, dtype=np.float64)
    csum = np.concatenate([[0.0], np.cumsum(trace)])
    n = len(trace)
    idx = np.arange(n)
    lo = np.maximum(0, idx - k + 1)
    return (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)


def fuse_templates_mean(embeddings: np.ndarray) -> np.ndarray:
    """Coordinate-wise mean of template embeddings."""
    embs = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if embs.shape[0] < 1:
        raise ValidationError("need at least one template embedding")
    return embs.mean(axis=0)


def make_query(keyword_id, params, cfg, window_cfg: WindowConfig, templates) -> KeywordQuery:
    """Embed keyword templates (padded/clipped to the window size) and fuse."""
    if not templates:
        raise ValidationError(f"keyword {keyword_id} has no templates")
    w = window_cfg.window_frames(templates[0].frame_shift)
    fitted = [pad_or_clip(t, w) for t in templates]
    embs = embed_sequences(params, cfg, fitted)
    return KeywordQuery(
        keyword_id=keyword_id,
        template_embeddings=np.asarray(embs, dtype=np.float64),
        fused=fuse_templates_mean(embs),
    )


def search(queries, utterances, params, cfg, window_cfg: WindowConfig):
    """Rank utterances per keyword by minimum smoothed cosine cost.

    Returns ({keyword_id: RankedList}, {(keyword_id, utterance_id): ScoreTrace}).
    """
    # window embeddings are query-independent: compute once per utterance
    utt_windows = {}
    for utt_id, seq in utterances:
        segs = window_segments(seq, window_cfg)
        starts = np.array([s for s, _ in segs])
        embs = embed_sequences(params, cfg, [w for _, w in segs])
        utt_windows[utt_id] = (starts, np.asarray(embs, dtype=np.float64))

    rankings = {}
    traces = {}
    for q in queries:
        scored = []
        for utt_id in sorted(utt_windows):
            starts, embs = utt_windows[utt_id]
            _, _, trace, degenerate = cosine_cost(q.fused, embs)
            smoothed = sma(trace, window_cfg.sma_len)
            traces[(q.keyword_id, utt_id)] = ScoreTrace(
                utterance_id=utt_id,
                costs=smoothed,
                window_starts=starts,
                zero_norm_seen=degenerate,
            )
            scored.append((utt_id, float(smoothed.min())))
        scored.sort(key=lambda e: (e[1], e[0]))
        rankings[q.keyword_id] = RankedList(keyword_id=q.keyword_id, entries=tuple(scored))
    return rankings, traces
