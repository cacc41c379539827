"""STAPLE label fusion.

Expectation-maximisation over rater decisions: the E-step scores each
voxel's probability of being true foreground given per-rater
sensitivity p_j and specificity q_j, the M-step re-estimates p_j and
q_j from those probabilities. Products over raters are carried in the
log domain.

For efficiency the E-step runs inside the bounding box of the union of
positive votes, dilated by one voxel. Outside that box every rater
voted background; those voxels are pinned to weight 0 and enter the
specificity sums in closed form. The restriction is skipped when the
foreground prior reaches 0.5, where the approximation would be unsafe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ArityError, DegenerateInputError
from .volume import BinaryMask, same_grid

__all__ = ["StapleParams", "FusionResult", "staple_fuse", "majority_vote"]

_LOG_EPS = 1e-10


@dataclass(frozen=True)
class StapleParams:
    max_iter: int = 100
    tol: float = 1e-6
    threshold: float = 0.5
    prior: float | None = None     # None: mean vote rate over the grid
    restrict_bbox: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        if self.prior is not None and not 0.0 < self.prior < 1.0:
            raise ValueError("prior must lie strictly between 0 and 1")


@dataclass(frozen=True, eq=False)
class FusionResult:
    consensus: BinaryMask
    weights: np.ndarray            # P(foreground) per voxel, full grid
    sensitivity: np.ndarray        # p_j per rater
    specificity: np.ndarray        # q_j per rater
    prior: float
    iterations: int
    converged: bool
    log_likelihood: np.ndarray     # one value per E-step


def majority_vote(masks: list[BinaryMask]) -> BinaryMask:
    """Strict-majority baseline: foreground where more than half the
    raters vote yes. A single rater passes through unchanged; an even
    split is background."""
    if not masks:
        raise ArityError("majority vote needs at least one mask")
    for m in masks[1:]:
        same_grid(masks[0], m, "rater masks")
    votes = np.zeros(masks[0].dims, dtype=np.int32)
    for m in masks:
        votes += m.data
    return BinaryMask(votes * 2 > len(masks), masks[0].spacing)


def _bbox_slices(union: np.ndarray) -> tuple[slice, slice, slice]:
    idx = np.argwhere(union)
    lo = np.maximum(idx.min(axis=0) - 1, 0)
    hi = np.minimum(idx.max(axis=0) + 2, union.shape)
    return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))


def staple_fuse(masks: list[BinaryMask],
                params: StapleParams = StapleParams()) -> FusionResult:
    """Fuse two or more binary segmentations into a consensus."""
    if len(masks) < 2:
        raise ArityError(f"fusion needs at least two masks, got {len(masks)}")
    for m in masks[1:]:
        same_grid(masks[0], m, "rater masks")

    dims = masks[0].dims
    spacing = masks[0].spacing
    n_full = int(np.prod(dims))
    n_raters = len(masks)

    union = np.zeros(dims, dtype=bool)
    total_votes = 0
    for m in masks:
        union |= m.data
        total_votes += m.count()
    if total_votes == 0:
        raise DegenerateInputError("every rater mask is empty")

    if params.prior is not None:
        prior = float(params.prior)
    else:
        prior = total_votes / (n_raters * n_full)

    if params.restrict_bbox and prior < 0.5:
        sl = _bbox_slices(union)
    else:
        sl = (slice(None), slice(None), slice(None))
    inner_shape = tuple(s.indices(d)[1] - s.indices(d)[0]
                        for s, d in zip(sl, dims))
    n_in = int(np.prod(inner_shape))
    n_out = n_full - n_in

    d = np.empty((n_raters, n_in), dtype=np.float64)
    for j, m in enumerate(masks):
        d[j] = m.data[sl].ravel()

    log_f = np.log(prior)
    log_1f = np.log1p(-prior)

    def clamped_logs(values: np.ndarray):
        c = np.clip(values, _LOG_EPS, 1.0 - _LOG_EPS)
        return np.log(c), np.log1p(-c)

    p = np.full(n_raters, 0.999)
    q = np.full(n_raters, 0.999)

    def e_step(p_vec, q_vec):
        log_p, log_1p = clamped_logs(p_vec)
        log_q, log_1q = clamped_logs(q_vec)
        # log a_i = log f + sum_j [ d_ij log p_j + (1 - d_ij) log(1 - p_j) ]
        la = log_f + log_1p.sum() + (log_p - log_1p) @ d
        lb = log_1f + log_q.sum() + (log_1q - log_q) @ d
        w = expit(la - lb)
        ll_in = float(np.logaddexp(la, lb).sum())
        # outside the box all raters voted background
        la0 = log_f + log_1p.sum()
        lb0 = log_1f + log_q.sum()
        ll = ll_in + n_out * float(np.logaddexp(la0, lb0))
        return w, ll

    def m_step(w):
        sw = w.sum()
        sv = (1.0 - w).sum() + n_out
        p_new = (d @ w) / sw if sw > 0 else np.full(n_raters, _LOG_EPS)
        q_new = (((1.0 - d) @ (1.0 - w)) + n_out) / sv
        return p_new, q_new

    w, ll = e_step(p, q)
    history = [ll]
    iterations = 1
    converged = False
    while iterations < params.max_iter:
        p, q = m_step(w)
        w_new, ll = e_step(p, q)
        iterations += 1
        history.append(ll)
        delta = float(np.abs(w_new - w).sum()) / n_full
        w = w_new
        if delta < params.tol:
            converged = True
            break

    weights = np.zeros(dims, dtype=np.float64)
    weights[sl] = w.reshape(inner_shape)
    consensus = BinaryMask(weights >= params.threshold, spacing)
    return FusionResult(
        consensus=consensus, weights=weights,
        sensitivity=np.asarray(p, dtype=np.float64),
        specificity=np.asarray(q, dtype=np.float64),
        prior=prior, iterations=iterations, converged=converged,
        log_likelihood=np.array(history))
