"""Classifier evaluation over a curated manifest.

Predictions are ingested as ranked wnid lists per instance (this package
never runs a model). Accuracy is the unweighted mean of per-class recalls
unless explicit class weights are supplied, in which case weights are
restricted to the evaluated classes and renormalized before use.

Per-class recall confidence intervals use the Wilson score interval, which
stays inside [0, 1] and behaves sensibly at recall 0 or 1. Differences of
recalls between two evaluations get a normal-approximation interval with
Wilson-style adjusted variances for each side; classes with fewer than two
instances on either side are reported with the maximally wide [-1, 1]
interval rather than a spuriously tight one.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import EmbeddingMatrix
from .curator import DatasetManifest
from .errors import FormatError, MissingKeyError, ValidationError
from .vectorops import argmax_class

log = logging.getLogger(__name__)

Z95 = 1.959963984540054  # two-sided 95% normal quantile


@dataclass(frozen=True)
class PredictionRecord:
    """Ranked predictions for one instance, highest confidence first."""

    instance_id: str
    ranked: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.ranked)) != len(self.ranked):
            raise ValidationError(f"ranked predictions for {self.instance_id!r} not distinct")


@dataclass(frozen=True)
class ClassStat:
    """A per-class scalar with its 95% confidence bounds and support."""

    wnid: str
    value: float
    ci_low: float
    ci_high: float
    n: int

    def __post_init__(self):
        if not (self.ci_low <= self.value <= self.ci_high):
            raise ValidationError(
                f"{self.wnid}: value {self.value} outside CI "
                f"[{self.ci_low}, {self.ci_high}]"
            )


def wilson_interval(successes: int, total: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total <= 0:
        raise ValidationError("wilson_interval needs total >= 1")
    p = successes / total
    z2 = z * z
    denom = 1.0 + z2 / total
    center = (p + z2 / (2.0 * total)) / denom
    half = z * math.sqrt(p * (1.0 - p) / total + z2 / (4.0 * total * total)) / denom
    low = max(0.0, center - half)
    high = min(1.0, center + half)
    # At the extremes the bound equals the estimate analytically; keep that
    # exact rather than a rounding hair inside it.
    if successes == 0:
        low = 0.0
    if successes == total:
        high = 1.0
    return low, high


def _prediction_index(predictions) -> Mapping[str, PredictionRecord]:
    if isinstance(predictions, Mapping):
        return predictions
    return {p.instance_id: p for p in predictions}


def per_class_recall(
    manifest: DatasetManifest,
    predictions: Iterable[PredictionRecord] | Mapping[str, PredictionRecord],
    k: int,
) -> list[ClassStat]:
    """Recall@k per class: the fraction of the class's instances whose true
    wnid appears in the top-k predictions. Sorted by wnid."""
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    index = _prediction_index(predictions)
    hits: dict[str, int] = {}
    totals: dict[str, int] = {}
    for row in manifest.rows:
        pred = index.get(row.instance_id)
        if pred is None:
            raise MissingKeyError(f"no prediction for instance {row.instance_id!r}")
        totals[row.wnid] = totals.get(row.wnid, 0) + 1
        if row.wnid in pred.ranked[:k]:
            hits[row.wnid] = hits.get(row.wnid, 0) + 1
    stats = []
    for wnid in sorted(totals):
        n = totals[wnid]
        h = hits.get(wnid, 0)
        low, high = wilson_interval(h, n)
        stats.append(ClassStat(wnid=wnid, value=h / n, ci_low=low, ci_high=high, n=n))
    return stats


def equally_weighted_accuracy(stats: list[ClassStat]) -> float:
    """Unweighted mean of per-class recalls."""
    if not stats:
        raise ValidationError("no class stats to average")
    return sum(s.value for s in stats) / len(stats)


def weighted_accuracy(stats: list[ClassStat], weights: Mapping[str, float]) -> float:
    """Recalls weighted by class frequency.

    `weights` must cover every class in `stats`; they are restricted to
    those classes and renormalized to sum to 1 (the renormalization factor
    is logged when it is not negligible).
    """
    if not stats:
        raise ValidationError("no class stats to average")
    restricted = []
    for s in stats:
        if s.wnid not in weights:
            raise MissingKeyError(f"no weight for class {s.wnid!r}")
        restricted.append(weights[s.wnid])
    total = sum(restricted)
    if total <= 0:
        raise ValidationError("class weights sum to zero over the evaluated classes")
    if abs(total - 1.0) > 1e-9:
        log.info("renormalizing class weights by 1/%.6g over %d classes", total, len(stats))
    return sum(w * s.value for w, s in zip(restricted, stats)) / total


def zero_shot_predict(
    image_embeddings: EmbeddingMatrix,
    synset_text_embeddings: EmbeddingMatrix,
    k: int,
) -> list[PredictionRecord]:
    """Rank synsets for each image by image-to-synset-text cosine."""
    if image_embeddings.dim != synset_text_embeddings.dim:
        raise ValidationError(
            f"dimension mismatch: images {image_embeddings.dim} vs "
            f"synset texts {synset_text_embeddings.dim}"
        )
    records = []
    for i, image_id in enumerate(image_embeddings.ids):
        ranked = argmax_class(image_embeddings.rows[i], synset_text_embeddings, k)
        records.append(
            PredictionRecord(instance_id=image_id, ranked=tuple(wnid for wnid, _ in ranked))
        )
    return records


def per_class_recall_diff_ci(
    statsA: list[ClassStat], statsB: list[ClassStat]
) -> list[ClassStat]:
    """Per shared class, recall(A) - recall(B) with a 95% interval.

    Variances on each side use the Wilson-adjusted point estimate
    p~ = (x + z^2/2) / (n + z^2) with var = p~ (1 - p~) / (n + z^2); the
    difference interval is the independent-proportion normal approximation,
    clipped to [-1, 1]. Classes with n < 2 on either side get the full
    [-1, 1] interval. Output is sorted ascending by the difference.
    """
    a_by = {s.wnid: s for s in statsA}
    b_by = {s.wnid: s for s in statsB}
    shared = sorted(set(a_by) & set(b_by))
    if not shared:
        raise ValidationError("the two evaluations share no classes")
    z2 = Z95 * Z95
    out = []
    for wnid in shared:
        a, b = a_by[wnid], b_by[wnid]
        diff = a.value - b.value
        n = min(a.n, b.n)
        if n < 2:
            log.warning("class %s has n < 2 on one side; interval widened to [-1, 1]", wnid)
            low, high = -1.0, 1.0
        else:
            variances = []
            for s in (a, b):
                adj = (s.value * s.n + z2 / 2.0) / (s.n + z2)
                variances.append(adj * (1.0 - adj) / (s.n + z2))
            half = Z95 * math.sqrt(sum(variances))
            low, high = max(-1.0, diff - half), min(1.0, diff + half)
        out.append(ClassStat(wnid=wnid, value=diff, ci_low=low, ci_high=high, n=n))
    out.sort(key=lambda s: (s.value, s.wnid))
    return out


# -- file formats -------------------------------------------------------------


def load_predictions(path) -> list[PredictionRecord]:
    """Read predictions JSONL: {"id": str, "ranked": [wnid, ...]}."""
    path = Path(path)
    records: list[PredictionRecord] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", path=path, line=lineno) from exc
            try:
                record = PredictionRecord(instance_id=row["id"], ranked=tuple(row["ranked"]))
            except KeyError as exc:
                raise FormatError(f"missing field {exc.args[0]!r}", path=path, line=lineno) from exc
            if record.instance_id in seen:
                raise ValidationError(
                    f"duplicate prediction for {record.instance_id!r}", path=path, line=lineno
                )
            seen.add(record.instance_id)
            records.append(record)
    return records


def write_predictions(records: list[PredictionRecord], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.instance_id, "ranked": list(r.ranked)}))
            fh.write("\n")


def write_class_stats_csv(stats: list[ClassStat], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write("wnid,value,ci_low,ci_high,n\n")
        for s in stats:
            fh.write(f"{s.wnid},{s.value!r},{s.ci_low!r},{s.ci_high!r},{s.n}\n")
