"""Chance-corrected inter-rater agreement over model labels and binned scores.

Implements Gwet's AC1 and Fleiss' kappa on an item-by-category count matrix,
plus percentile-bootstrap confidence intervals and greedy leave-one-out
outlier detection across raters.

Conventions used throughout:

* For dichotomous labels, category 0 is the positive ("yes") category and
  category 1 the negative, with k fixed at 2.
* Score agreement uses the ten ordinal levels from ``bin_scores`` with k
  fixed at 10, whether or not every level occurs.

Both coefficients share the observed agreement

    P_o = (1/N) sum_i sum_j n_ij (n_ij - 1) / (n (n - 1))

and differ in the chance term: AC1 uses the adjusted
P_e* = (1/(k-1)) sum_j p_j (1 - p_j), Fleiss uses P_e = sum_j p_j^2, where
p_j = (1/N) sum_i n_ij / n. The coefficient is (P_o - P_e) / (1 - P_e).
"""
from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    DegenerateChance,
    IncompleteRatings,
    OutOfRange,
    TooFewModels,
)


@dataclass(frozen=True)
class RatingMatrix:
    """Item-by-category rater counts: counts[i, j] raters put item i in j."""

    counts: np.ndarray
    n: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.float64)
        object.__setattr__(self, "counts", counts)
        if counts.ndim != 2:
            raise ValueError("counts must be 2-D (items x categories)")
        if counts.shape[0] < 1 or counts.shape[1] < 2:
            raise ValueError("need >=1 item and >=2 categories")
        if self.n < 2:
            raise ValueError("need >=2 raters")
        if (counts < 0).any():
            raise ValueError("counts must be non-negative")
        if not np.all(counts.sum(axis=1) == self.n):
            raise IncompleteRatings("every row must sum to the rater count")

    @property
    def num_items(self) -> int:
        return self.counts.shape[0]

    @property
    def num_categories(self) -> int:
        return self.counts.shape[1]


@dataclass(frozen=True)
class AgreementResult:
    coefficient: float
    kind: str  # "AC1" | "Fleiss"
    p_o: float
    p_e: float
    ci_95: tuple[float, float] | None = None


@dataclass(frozen=True)
class OutlierReport:
    """Leave-one-out outlier scan over raters (pooled label agreement).

    base_ac1 and deltas describe the first scan over the full rater set;
    excluded lists the greedy exclusion order.
    """

    base_ac1: float
    deltas: dict[str, float]
    excluded: list[str]


def build_rating_matrix(
    ratings: Mapping[str, Sequence[int]], k: int | None = None
) -> RatingMatrix:
    """Tally per-rater category assignments into a RatingMatrix.

    ratings maps rater name -> category index per item. Every rater must
    rate every item (equal-length sequences, no None entries). k fixes the
    category space; by default it is max(category) + 1 (at least 2).
    """
    raters = list(ratings)
    if len(raters) < 2:
        raise IncompleteRatings("need >=2 raters")
    lengths = {r: len(ratings[r]) for r in raters}
    num_items = max(lengths.values())
    for rater, length in lengths.items():
        if length != num_items:
            raise IncompleteRatings(f"rater {rater!r} rated {length}/{num_items} items")
    columns = []
    for rater in raters:
        vec = list(ratings[rater])
        for i, value in enumerate(vec):
            if value is None:
                raise IncompleteRatings(f"item {i}: missing rating from {rater!r}")
        columns.append(np.asarray(vec, dtype=np.int64))
    assigned = np.stack(columns, axis=1)  # (N, n_raters)
    if (assigned < 0).any():
        raise ValueError("category indices must be >= 0")
    num_cats = int(assigned.max()) + 1 if assigned.size else 2
    if k is not None:
        if num_cats > k:
            raise ValueError(f"category index {num_cats - 1} outside fixed k={k}")
        num_cats = k
    num_cats = max(num_cats, 2)
    counts = np.zeros((num_items, num_cats), dtype=np.float64)
    for i in range(num_items):
        counts[i] = np.bincount(assigned[i], minlength=num_cats)
    return RatingMatrix(counts=counts, n=len(raters))


def percent_agreement(m: RatingMatrix) -> float:
    """Observed proportion of agreeing rater pairs, averaged over items."""
    return _kernels.observed_agreement_np(m.counts, m.n)


def gwet_ac1(m: RatingMatrix) -> AgreementResult:
    coef, po, pe = _kernels.coefficient(m.counts, m.n, _kernels.AC1)
    if np.isnan(coef):
        # P_e* = 1 is unreachable for k >= 2; guarded anyway.
        raise DegenerateChance(f"AC1 chance agreement degenerate (P_e*={pe})")
    return AgreementResult(coefficient=float(coef), kind="AC1", p_o=po, p_e=pe)


def fleiss_kappa(m: RatingMatrix) -> AgreementResult:
    coef, po, pe = _kernels.coefficient(m.counts, m.n, _kernels.FLEISS)
    if np.isnan(coef):
        raise DegenerateChance(
            "Fleiss kappa undefined: all ratings fall in a single category (P_e=1)"
        )
    return AgreementResult(coefficient=float(coef), kind="Fleiss", p_o=po, p_e=pe)


def bin_scores(scores: Sequence[float]) -> np.ndarray:
    """Map scores in [0,1] to ten ordinal levels, each spanning 0.1.

    level = min(floor(score * 10), 9), so 1.0 lands in the top level.
    """
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size and ((arr < 0.0).any() or (arr > 1.0).any()):
        bad = arr[(arr < 0.0) | (arr > 1.0)][0]
        raise OutOfRange(f"score {bad} outside [0, 1]")
    return np.minimum(np.floor(arr * 10.0).astype(np.int64), 9)


def bootstrap_ci(
    kind: str,
    m: RatingMatrix,
    resamples: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Percentile 95% CI from item-level resampling with replacement.

    Deterministic for a fixed seed. Resamples whose chance term degenerates
    are skipped; more than 10% skipped is an error.
    """
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    kind_code = {"AC1": _kernels.AC1, "Fleiss": _kernels.FLEISS}[kind]
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, m.num_items, size=(resamples, m.num_items))
    stats = _kernels.bootstrap(m.counts, m.n, idx, kind_code)
    valid = stats[~np.isnan(stats)]
    skipped = resamples - valid.size
    if skipped > 0.10 * resamples:
        raise DegenerateChance(
            f"{skipped}/{resamples} bootstrap resamples had degenerate chance agreement"
        )
    lo, hi = np.percentile(valid, [2.5, 97.5])
    return float(lo), float(hi)


def _ac1_from_label_vectors(vectors: list[np.ndarray]) -> float:
    n = len(vectors)
    positives = np.sum(vectors, axis=0)  # raters saying yes, per cell
    counts = np.stack([positives, n - positives], axis=1).astype(np.float64)
    coef, _, _ = _kernels.coefficient(counts, n, _kernels.AC1)
    return float(coef)


def detect_outliers(
    labels: Mapping[str, Sequence[bool]],
    threshold_fraction: float = 0.10,
) -> OutlierReport:
    """Greedy leave-one-out outlier scan over pooled label vectors.

    In each round, the rater whose removal raises AC1 the most is excluded
    when that increase exceeds threshold_fraction x the round's base AC1.
    Stops when nothing exceeds the threshold or only two raters remain.
    """
    models = list(labels)
    if len(models) < 3:
        raise TooFewModels("leave-one-out detection needs >=3 models")
    vectors = {}
    length = None
    for name in models:
        vec = np.asarray(labels[name], dtype=np.int64)
        if length is None:
            length = vec.size
        elif vec.size != length:
            raise IncompleteRatings(f"model {name!r} label vector length mismatch")
        vectors[name] = vec

    def ac1_of(names: list[str]) -> float:
        return _ac1_from_label_vectors([vectors[n] for n in names])

    base = ac1_of(models)
    first_deltas = {name: ac1_of([m for m in models if m != name]) - base
                    for name in models}

    current = list(models)
    excluded: list[str] = []
    while len(current) > 2:
        round_base = ac1_of(current)
        deltas = {name: ac1_of([m for m in current if m != name]) - round_base
                  for name in current}
        worst = max(current, key=lambda name: deltas[name])
        # only a genuine increase counts, so exclusions can never lower AC1
        # (matters when the base coefficient is negative)
        if deltas[worst] > max(threshold_fraction * round_base, 0.0):
            excluded.append(worst)
            current.remove(worst)
        else:
            break
    return OutlierReport(base_ac1=base, deltas=first_deltas, excluded=excluded)
