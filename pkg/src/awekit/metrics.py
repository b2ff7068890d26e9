"""Retrieval metrics: average precision, precision at k, and corpus-level
report assembly (MAP, P@5, P@N)."""

from dataclasses import dataclass

from .errors import ValidationError
from .matcher import RankedList


@dataclass(frozen=True)
class KeywordMetrics:
    keyword_id: int
    ap: float
    p_at_5: float
    p_at_n: float
    num_relevant: int


@dataclass(frozen=True)
class MetricsReport:
    per_keyword: tuple[KeywordMetrics, ...]
    map: float
    mean_p_at_5: float
    mean_p_at_n: float

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "mean_p_at_5": self.mean_p_at_5,
            "mean_p_at_n": self.mean_p_at_n,
            "per_keyword": [
                {
                    "keyword_id": m.keyword_id,
                    "ap": m.ap,
                    "p_at_5": m.p_at_5,
                    "p_at_n": m.p_at_n,
                    "num_relevant": m.num_relevant,
                }
                for m in self.per_keyword
            ],
        }


def average_precision(ranked: RankedList, relevant: set) -> float:
    """Mean of precision-at-hit over the relevant set."""
    if not relevant:
        raise ValidationError(f"keyword {ranked.keyword_id}: empty relevant set")
    hits = 0
    total = 0.0
    for rank, (utt_id, _) in enumerate(ranked.entries, start=1):
        if utt_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def precision_at_k(ranked: RankedList, relevant: set, k: int) -> float:
    """Fraction of the top k entries that are relevant.

    The denominator stays k even when fewer than k utterances exist
    (fixed-denominator convention)."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    hits = sum(1 for utt_id, _ in ranked.entries[:k] if utt_id in relevant)
    return hits / k


def evaluate(rankings: dict, relevance: dict, group_language=None) -> MetricsReport:
    """Per-keyword AP/P@5/P@N plus unweighted means across keywords.

    relevance maps keyword_id -> set of utterance ids containing it.
    group_language (optional keyword_id -> language) enables per-group
    means via group_means()."""
    per_keyword = []
    for keyword_id in sorted(rankings):
        if keyword_id not in relevance:
            raise ValidationError(f"no relevance judgments for keyword {keyword_id}")
        relevant = set(relevance[keyword_id])
        ranked = rankings[keyword_id]
        per_keyword.append(
            KeywordMetrics(
                keyword_id=keyword_id,
                ap=average_precision(ranked, relevant),
                p_at_5=precision_at_k(ranked, relevant, 5),
                p_at_n=precision_at_k(ranked, relevant, len(relevant)),
                num_relevant=len(relevant),
            )
        )
    n = len(per_keyword)
    if n == 0:
        raise ValidationError("no keywords to evaluate")
    return MetricsReport(
        per_keyword=tuple(per_keyword),
        map=sum(m.ap for m in per_keyword) / n,
        mean_p_at_5=sum(m.p_at_5 for m in per_keyword) / n,
        mean_p_at_n=sum(m.p_at_n for m in per_keyword) / n,
    )


def group_means(report: MetricsReport, group_language: dict) -> dict:
    """Unweighted per-language means, mirroring per-group result tables."""
    groups: dict[int, list[KeywordMetrics]] = {}
    for m in report.per_keyword:
        groups.setdefault(group_language[m.keyword_id], []).append(m)
    out = {}
    for lang in sorted(groups):
        ms = groups[lang]
        out[lang] = {
            "map": sum(m.ap for m in ms) / len(ms),
            "mean_p_at_5": sum(m.p_at_5 for m in ms) / len(ms),
            "mean_p_at_n": sum(m.p_at_n for m in ms) / len(ms),
            "num_keywords": len(ms),
        }
    return out


def render_table(report: MetricsReport, group_language=None) -> str:
    """Aligned-text table: per-language group rows plus the overall row."""
    lines = [f"{'group':<12}{'MAP':>8}{'P@5':>8}{'P@N':>8}{'#kw':>6}"]
    if group_language is not None:
        for lang, g in group_means(report, group_language).items():
            lines.append(
                f"{'lang ' + str(lang):<12}{g['map']:>8.3f}{g['mean_p_at_5']:>8.3f}"
                f"{g['mean_p_at_n']:>8.3f}{g['num_keywords']:>6d}"
            )
    lines.append(
        f"{'all':<12}{report.map:>8.3f}{report.mean_p_at_5:>8.3f}"
        f"{report.mean_p_at_n:>8.3f}{len(report.per_keyword):>6d}"
    )
    return "\n".join(lines)


def relevance_from_ground_truth(occurrences, keyword_ids=None) -> dict:
    """keyword_id -> set of utterance ids, from occurrence records."""
    rel: dict[int, set] = {}
    for occ in occurrences:
        rel.setdefault(occ.word_id, set()).add(occ.utterance_id)
    if keyword_ids is not None:
        rel = {k: rel[k] for k in keyword_ids if k in rel}
    return rel
