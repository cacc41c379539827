"""Spatial error maps and cohort-level statistics.

The voxelwise maps aggregate where methods miss lesions (false
negatives) and where they hallucinate them (false positives) across a
set of evaluated pairs. The scalar routines cover the cohort summary
table and the hypothesis tests used to compare patient groups: Welch's
unequal-variance t-test and Fisher's exact test.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import (ArityError, EvaluationWarning, ShapeMismatchError,
                     UndefinedMetricError)
from .volume import BinaryMask, connected_components, same_grid

__all__ = [
    "RateMap",
    "fn_fp_maps",
    "Summary",
    "CohortSummary",
    "summarize_cohort",
    "WelchResult",
    "welch_ttest",
    "fisher_exact",
    "train_test_r2",
]


@dataclass(frozen=True, eq=False)
class RateMap:
    """A voxelwise error-rate grid plus its building blocks.

    ``rate`` is numerator/denominator where the denominator is
    positive and 0 elsewhere. ``lesion_count`` holds, per voxel, the
    number of distinct subjects whose reference contains that voxel.
    """

    numerator: np.ndarray
    denominator: np.ndarray
    rate: np.ndarray
    lesion_count: np.ndarray
    spacing: tuple[float, float, float]


def fn_fp_maps(pairs: list[tuple[BinaryMask, BinaryMask]],
               subject_ids: list[str] | None = None,
               fp_denominator: str = "ref_negative"
               ) -> tuple[RateMap, RateMap]:
    """Aggregate false-negative and false-positive rates over pairs.

    Each pair is (reference, prediction) on a common grid. The FN rate
    divides by how often a voxel was reference foreground; the FP rate
    divides by how often it was reference background, or by the total
    number of pairs with ``fp_denominator="pairs"``.

    ``subject_ids`` lets several pairs (one per method) share a
    subject so the lesion-count grid counts each subject once.
    """
    if not pairs:
        raise ArityError("fn_fp_maps needs at least one pair")
    if fp_denominator not in ("ref_negative", "pairs"):
        raise ValueError(f"bad fp_denominator {fp_denominator!r}")
    if subject_ids is None:
        subject_ids = [f"pair{i}" for i in range(len(pairs))]
    if len(subject_ids) != len(pairs):
        raise ValueError("subject_ids must parallel pairs")

    ref0 = pairs[0][0]
    dims = ref0.dims
    fn_num = np.zeros(dims, dtype=np.int64)
    fn_den = np.zeros(dims, dtype=np.int64)
    fp_num = np.zeros(dims, dtype=np.int64)

    for ref, pred in pairs:
        same_grid(ref0, ref, "map inputs")
        same_grid(ref, pred, "reference and prediction")
        fn_num += ref.data & ~pred.data
        fn_den += ref.data
        fp_num += pred.data & ~ref.data

    if fp_denominator == "ref_negative":
        fp_den = len(pairs) - fn_den
    else:
        fp_den = np.full(dims, len(pairs), dtype=np.int64)

    lesion_count = np.zeros(dims, dtype=np.int64)
    by_subject: dict[str, np.ndarray] = {}
    for (ref, _), sid in zip(pairs, subject_ids):
        if sid in by_subject:
            by_subject[sid] |= ref.data
        else:
            by_subject[sid] = ref.data.copy()
    for acc in by_subject.values():
        lesion_count += acc

    def _rate(num, den):
        out = np.zeros(dims, dtype=np.float64)
        np.divide(num, den, out=out, where=den > 0)
        return out

    spacing = ref0.spacing
    fn = RateMap(fn_num, fn_den, _rate(fn_num, fn_den), lesion_count, spacing)
    fp = RateMap(fp_num, fp_den, _rate(fp_num, fp_den), lesion_count, spacing)
    return fn, fp


@dataclass(frozen=True)
class Summary:
    mean: float
    sd: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float
    n: int
    sd_degenerate: bool = False   # single observation, sd reported as 0


def _summary(values: np.ndarray) -> Summary:
    n = len(values)
    degenerate = n == 1
    sd = 0.0 if degenerate else float(np.std(values, ddof=1))
    q1, med, q3 = (float(np.percentile(values, q)) for q in (25, 50, 75))
    return Summary(mean=float(np.mean(values)), sd=sd,
                   minimum=float(np.min(values)), q1=q1, median=med, q3=q3,
                   maximum=float(np.max(values)), n=n,
                   sd_degenerate=degenerate)


@dataclass(frozen=True, eq=False)
class CohortSummary:
    n: int
    volumes_ml: np.ndarray
    lesion_counts: np.ndarray
    volume: Summary
    count: Summary
    volume_hist: tuple[np.ndarray, np.ndarray]   # (edges, counts)
    count_hist: tuple[np.ndarray, np.ndarray]


def _histogram(values: np.ndarray, width: float):
    top = float(np.max(values))
    n_bins = max(1, int(math.ceil(top / width)))
    edges = np.arange(n_bins + 1, dtype=np.float64) * width
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def summarize_cohort(masks: list[BinaryMask], volume_bin_ml: float = 10.0,
                     count_bin: float = 10.0,
                     connectivity: int = 26) -> CohortSummary:
    """Volume and lesion-count distribution of a set of reference
    masks, in the shape of the usual cohort table."""
    if not masks:
        raise ArityError("cohort summary needs at least one mask")
    if volume_bin_ml <= 0 or count_bin <= 0:
        raise ValueError("bin widths must be positive")
    volumes = np.array([m.volume_ml() for m in masks])
    counts = np.array([connected_components(m, connectivity).count
                       for m in masks], dtype=np.float64)
    return CohortSummary(
        n=len(masks), volumes_ml=volumes, lesion_counts=counts,
        volume=_summary(volumes), count=_summary(counts),
        volume_hist=_histogram(volumes, volume_bin_ml),
        count_hist=_histogram(counts, count_bin))


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float
    infinite: bool = False   # variances were zero with unequal means


def welch_ttest(a, b) -> WelchResult:
    """Two-sided Welch t-test (unequal variances).

    Degenerate inputs are mapped to the sensible limits: identical
    constant samples give p = 1, constant samples with different means
    give p = 0 with the ``infinite`` flag set.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ArityError("welch_ttest needs at least two values per group")
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    se2 = va / na + vb / nb
    if se2 == 0.0:
        if ma == mb:
            return WelchResult(t=0.0, df=float("nan"), p_value=1.0)
        return WelchResult(t=math.copysign(float("inf"), ma - mb),
                           df=float("nan"), p_value=0.0, infinite=True)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    # two-sided p through the regularised incomplete beta
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return WelchResult(t=float(t), df=float(df), p_value=min(1.0, p))


def _log_choose(n: int, k: int) -> float:
    return (math.lgamma(n + 1) - math.lgamma(k + 1)
            - math.lgamma(n - k + 1))


def fisher_exact(table) -> float:
    """Two-sided Fisher exact p for a 2x2 contingency table.

    Sums the hypergeometric probability of every table with the same
    margins whose probability does not exceed the observed one (up to
    a 1e-12 relative slack for float noise). Zero margins -> p = 1.
    """
    (a, b), (c, d) = table
    cells = (int(a), int(b), int(c), int(d))
    if any(v < 0 for v in cells):
        raise ValueError(f"negative cell in {table}")
    a, b, c, d = cells
    r1, r2 = a + b, c + d
    c1 = a + c
    n = r1 + r2

    def log_pmf(x: int) -> float:
        return (_log_choose(r1, x) + _log_choose(r2, c1 - x)
                - _log_choose(n, c1))

    lo = max(0, c1 - r2)
    hi = min(r1, c1)
    observed = log_pmf(a)
    cutoff = observed + math.log1p(1e-12)
    p = sum(math.exp(lp) for x in range(lo, hi + 1)
            if (lp := log_pmf(x)) <= cutoff)
    return min(1.0, p)


def train_test_r2(train, test) -> float:
    """Squared Pearson correlation between paired cohort statistics.

    A constant train column leaves the correlation undefined; a
    constant test column is reported as 0 with a warning.
    """
    x = np.asarray(train, dtype=np.float64)
    y = np.asarray(test, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError("train and test must pair up")
    if len(x) < 3:
        raise ArityError("correlation needs at least three pairs")
    vx = x.var()
    vy = y.var()
    if vx == 0.0:
        raise UndefinedMetricError("train column is constant")
    if vy == 0.0:
        warnings.warn("test column is constant; reporting R^2 = 0",
                      EvaluationWarning, stacklevel=2)
        return 0.0
    r = float(np.mean((x - x.mean()) * (y - y.mean())) / math.sqrt(vx * vy))
    return r * r
