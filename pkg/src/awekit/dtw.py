"""Dynamic time warping baseline: global DTW, subsequence DTW search over
frame features, and DTW-based multi-template fusion."""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError
from .features import FeatureSequence
from .matcher import ZERO_NORM_COST, RankedList


@dataclass(frozen=True)
class WarpPath:
    pairs: tuple[tuple[int, int], ...]  # (query index, content index), 0-based


@dataclass(frozen=True)
class DtwResult:
    cost: float
    path: WarpPath
    span: tuple[int, int]  # [start_j, end_j) on the content axis


def local_cost(a_frame, b_frame) -> float:
    """Cosine distance between two frames; zero-norm frames cost 1."""
    a = np.asarray(a_frame, dtype=np.float64)
    b = np.asarray(b_frame, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"frame dims differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return ZERO_NORM_COST
    return float(1.0 - np.dot(a, b) / (na * nb))


def cost_matrix(a: FeatureSequence, b: FeatureSequence) -> np.ndarray:
    """Pairwise cosine distances between the frames of two sequences."""
    if a.dim != b.dim:
        raise ShapeError(f"feature dims differ: {a.dim} vs {b.dim}")
    fa = a.frames.astype(np.float64)
    fb = b.frames.astype(np.float64)
    na = np.linalg.norm(fa, axis=1)
    nb = np.linalg.norm(fb, axis=1)
    za, zb = na == 0.0, nb == 0.0
    fa = fa / np.where(za, 1.0, na)[:, None]
    fb = fb / np.where(zb, 1.0, nb)[:, None]
    c = 1.0 - fa @ fb.T
    c[za, :] = ZERO_NORM_COST
    c[:, zb] = ZERO_NORM_COST
    return c


def _backtrace(acc: np.ndarray, i: int, j: int, free_start: bool):
    """Walk the accumulated-cost matrix from (i, j) back to the path start.

    Tie-break prefers the diagonal step, then (1, 0), then (0, 1)."""
    path = [(i, j)]
    while i > 0 or (j > 0 and not free_start):
        if i > 0 and j > 0:
            options = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            pick = int(np.argmin(options))
        elif i > 0:
            pick = 1
        else:
            pick = 2
        if pick == 0:
            i, j = i - 1, j - 1
        elif pick == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    return tuple(reversed(path))


def dtw(a: FeatureSequence, b: FeatureSequence) -> DtwResult:
    """Global alignment with steps {(1,0),(0,1),(1,1)} and cosine local cost."""
    return dtw_from_costs(cost_matrix(a, b))


def dtw_from_costs(costs: np.ndarray) -> DtwResult:
    costs = np.asarray(costs, dtype=np.float64)
    ta, tb = costs.shape
    if ta < 1 or tb < 1:
        raise ValidationError("dtw inputs must be non-empty")
    acc = np.empty((ta, tb))
    acc[0, 0] = costs[0, 0]
    acc[0, 1:] = costs[0, 1:].cumsum() + costs[0, 0]
    acc[1:, 0] = costs[1:, 0].cumsum() + costs[0, 0]
    for i in range(1, ta):
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, tb):
            row[j] = costs[i, j] + min(prev[j - 1], prev[j], row[j - 1])
    path = _backtrace(acc, ta - 1, tb - 1, free_start=False)
    return DtwResult(cost=float(acc[-1, -1]), path=WarpPath(pairs=path), span=(0, tb))


def sdtw(query: FeatureSequence, content: FeatureSequence) -> DtwResult:
    """Subsequence DTW: free start and end on the content axis."""
    return sdtw_from_costs(cost_matrix(query, content))


def sdtw_from_costs(costs: np.ndarray) -> DtwResult:
    costs = np.asarray(costs, dtype=np.float64)
    tq, tc = costs.shape
    if tq < 1 or tc < 1:
        raise ValidationError("sdtw inputs must be non-empty")
    acc = np.empty((tq, tc))
    acc[0] = costs[0]  # every content column may start a match
    for i in range(1, tq):
        row = acc[i]
        prev = acc[i - 1]
        row[0] = costs[i, 0] + prev[0]
        for j in range(1, tc):
            row[j] = costs[i, j] + min(prev[j - 1], prev[j], row[j - 1])
    end_j = int(np.argmin(acc[-1]))
    path = _backtrace(acc, tq - 1, end_j, free_start=True)
    return DtwResult(
        cost=float(acc[-1, end_j]),
        path=WarpPath(pairs=path),
        span=(path[0][1], end_j + 1),
    )


def normalized_sdtw_cost(query: FeatureSequence, content: FeatureSequence) -> float:
    """S-DTW cost divided by query length; the utterance ranking score."""
    return sdtw(query, content).cost / query.num_frames


def fuse_templates_dtw(templates, main_index: int = 0) -> FeatureSequence:
    """Average templates frame-wise along DTW alignments to a main template.

    Each main-template frame is replaced by the mean of itself and every
    frame (from every other template) aligned to it."""
    templates = list(templates)
    if not templates:
        raise ValidationError("need at least one template")
    if not 0 <= main_index < len(templates):
        raise ValidationError(f"main_index {main_index} out of range")
    main = templates[main_index]
    groups = [[main.frames[t].astype(np.float64)] for t in range(main.num_frames)]
    for k, other in enumerate(templates):
        if k == main_index:
            continue
        result = dtw(other, main)
        for i, j in result.path.pairs:
            groups[j].append(other.frames[i].astype(np.float64))
    fused = np.stack([np.mean(g, axis=0) for g in groups])
    return FeatureSequence(
        frames=fused.astype(np.float32),
        frame_shift=main.frame_shift,
        frame_length=main.frame_length,
    )


def sdtw_search(keyword_templates: dict, utterances, fusion: str = "none", threads: int = 1):
    """Rank utterances per keyword by normalized S-DTW cost.

    fusion="none" scores each utterance by the best template;
    fusion="dtw" first fuses all templates (main = first listed).
    Scoring runs on up to `threads` workers; results merge in utterance-id
    order so the output is deterministic either way."""
    if fusion not in ("none", "dtw"):
        raise ValidationError(f"fusion must be 'none' or 'dtw', got {fusion!r}")
    utterances = sorted(utterances, key=lambda u: u[0])
    rankings = {}
    for keyword_id, templates in keyword_templates.items():
        if not templates:
            raise ValidationError(f"keyword {keyword_id} has no templates")
        if fusion == "dtw":
            probes = [fuse_templates_dtw(templates, main_index=0)]
        else:
            probes = list(templates)

        def score_one(item):
            utt_id, seq = item
            return utt_id, float(min(normalized_sdtw_cost(p, seq) for p in probes))

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                scored = list(pool.map(score_one, utterances))
        else:
            scored = [score_one(u) for u in utterances]
        scored.sort(key=lambda e: (e[1], e[0]))
        rankings[keyword_id] = RankedList(keyword_id=keyword_id, entries=tuple(scored))
    return rankings
