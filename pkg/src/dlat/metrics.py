"""Evaluation: identity deviation under age gaps, similarity-table construction,
age-transformation MAE, and pairwise perceptual diversity.

Similarities are percentages on a 0-100 scale and IDAG is reported in the same
percentage points.
"""
from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datamodel import ALL_GROUPS, AgeGroup, SimilarityTable
from .io import read_image
from .oracles import FaceVerifier, verify_many

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalRecord:
    source_id: str
    source_group: AgeGroup
    target_group: AgeGroup
    predicted_similarity: float
    table_mean: float  # NaN when the table has no data for the pair

    def __post_init__(self):
        if not 0.0 <= self.predicted_similarity <= 100.0:
            raise ValueError(f"predicted similarity {self.predicted_similarity} outside [0, 100]")

    @classmethod
    def from_table(cls, source_id, source_group, target_group, predicted, table: SimilarityTable) -> "EvalRecord":
        return cls(str(source_id), source_group, target_group, float(predicted), table[source_group, target_group])

    @property
    def valid(self) -> bool:
        return not math.isnan(self.table_mean)

    @property
    def gap(self) -> float:
        return abs(self.predicted_similarity - self.table_mean)


def _check_layout(records: Sequence[EvalRecord], n: int, m: int) -> None:
    if not 1 <= m <= 10:
        raise ValueError(f"M must be in [1, 10], got {m}")
    if len(records) != n * m:
        raise ValueError(f"expected N*M = {n}*{m} = {n * m} records, got {len(records)}")
    per_source = defaultdict(int)
    for r in records:
        per_source[r.source_id] += 1
    if len(per_source) != n:
        raise ValueError(f"expected {n} distinct sources, got {len(per_source)}")
    bad = {s: c for s, c in per_source.items() if c != m}
    if bad:
        raise ValueError(f"sources without exactly {m} target records: {bad}")


def _usable(records: Sequence[EvalRecord]) -> list[EvalRecord]:
    ok = [r for r in records if r.valid]
    if len(ok) < len(records):
        log.warning("%d record(s) hit similarity-table cells without data and are excluded",
                    len(records) - len(ok))
    return ok


def idag(records: Sequence[EvalRecord], n: int, m: int) -> float:
    """Mean |predicted - table mean| over the N*M records, in percentage points."""
    _check_layout(records, n, m)
    ok = _usable(records)
    if not ok:
        raise ValueError("no record has a valid similarity-table cell")
    return math.fsum(r.gap for r in ok) / len(ok)


def idag_report(records: Sequence[EvalRecord], n: int, m: int) -> dict:
    value = idag(records, n, m)
    by_group: dict[str, list[float]] = defaultdict(list)
    for r in _usable(records):
        by_group[r.source_group.bounds_str].append(r.gap)
    return {
        "idag": value,
        "per_source_group": {g: math.fsum(v) / len(v) for g, v in sorted(by_group.items(),
                                                                         key=lambda kv: AgeGroup.parse(kv[0]).index)},
        "N": n,
        "M": m,
        "excluded": sum(not r.valid for r in records),
    }


def age_mae(predicted_ages: Sequence[float], target_groups: Sequence[AgeGroup]) -> float:
    """Mean distance from each predicted age to its target group's interval."""
    if len(predicted_ages) != len(target_groups):
        raise ValueError(f"{len(predicted_ages)} predictions for {len(target_groups)} targets")
    if len(predicted_ages) == 0:
        raise ValueError("age_mae needs at least one prediction")
    return math.fsum(g.distance(a) for a, g in zip(predicted_ages, target_groups)) / len(predicted_ages)


def pairwise_diversity(images: Sequence[np.ndarray], distance: Callable[[np.ndarray, np.ndarray], float]) -> float:
    """Mean distance over all unordered image pairs."""
    if len(images) < 2:
        raise ValueError("pairwise diversity needs at least two images")
    shape = np.shape(images[0])
    if any(np.shape(im) != shape for im in images):
        raise ValueError("all images must share one shape")
    d = [distance(a, b) for a, b in itertools.combinations(images, 2)]
    return math.fsum(d) / len(d)


@dataclass(frozen=True)
class FaceEntry:
    subject: str
    group: AgeGroup
    image: np.ndarray | str | Path  # pixels, or a path read on demand
    name: str = ""


def _pixels(e: FaceEntry) -> np.ndarray:
    return read_image(e.image) if isinstance(e.image, (str, Path)) else np.asarray(e.image, float)


def similarity_pairs(faces: Sequence[FaceEntry]) -> list[tuple[int, int]]:
    """Ordered (i, j) index pairs of the same subject in different groups."""
    by_subject: dict[str, list[int]] = defaultdict(list)
    for i, f in enumerate(faces):
        by_subject[f.subject].append(i)
    pairs = []
    for subject, idx in by_subject.items():
        if len(idx) < 2:
            log.warning("subject %s has a single image and contributes no pairs", subject)
        pairs.extend((i, j) for i in idx for j in idx if i != j and faces[i].group is not faces[j].group)
    return pairs


def build_similarity_table(faces: Sequence[FaceEntry], verifier: FaceVerifier, max_workers: int = 4) -> SimilarityTable:
    """Mean verifier score per (group, group) over same-subject pairs, symmetrized,
    with a diagonal of 100 and NaN where no pair exists."""
    if not faces:
        raise ValueError("empty face collection")
    pairs = similarity_pairs(faces)
    if not pairs:
        raise ValueError("no same-subject cross-group pairs to score")
    cache: dict[int, np.ndarray] = {}

    def px(i):
        if i not in cache:
            cache[i] = _pixels(faces[i])
        return cache[i]

    jobs = [(f"{faces[i].name or i}|{faces[j].name or j}", px(i), px(j)) for i, j in pairs]
    scores = verify_many(verifier, jobs, max_workers)
    sums = np.zeros((10, 10))
    counts = np.zeros((10, 10))
    for (i, j), s in zip(pairs, scores):
        a, b = faces[i].group.index, faces[j].group.index
        sums[a, b] += s
        counts[a, b] += 1
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    sym = np.where(np.isnan(means), means.T, np.where(np.isnan(means.T), means, (means + means.T) / 2))
    np.fill_diagonal(sym, 100.0)
    empty = [(ALL_GROUPS[a].bounds_str, ALL_GROUPS[b].bounds_str)
             for a in range(10) for b in range(a + 1, 10) if np.isnan(sym[a, b])]
    if empty:
        log.info("%d similarity-table cell pair(s) have no data", len(empty))
    return SimilarityTable(sym)
