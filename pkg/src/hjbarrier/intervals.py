"""Batched interval arithmetic over axis-aligned boxes.

Every routine works on whole batches of boxes at once: ``lo`` and ``hi`` are
arrays of shape ``(B, k)`` holding the lower and upper corners of ``B`` boxes
in ``k`` variables.  Polynomials enter as an exponent matrix ``(M, k)`` plus a
coefficient vector ``(M,)`` (or ``(B, M)`` when every box carries its own
coefficients), which is what :class:`hjbarrier.poly.PolyExpr` exposes.

Rounding is plain IEEE round-to-nearest; enclosures are valid up to floating
point error of the same order as the arithmetic itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


def power_bounds(lo, hi, e):
    """Exact range of ``x**e`` for ``x`` in ``[lo, hi]`` (elementwise, ``e >= 0``)."""
    lo, hi, e = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float), np.asarray(e))
    plo = lo ** e
    phi = hi ** e
    even = (e % 2) == 0
    straddle = even & (lo < 0) & (hi > 0)
    neg_even = even & (hi <= 0)
    out_lo = np.where(neg_even, phi, plo)
    out_hi = np.where(neg_even, plo, phi)
    out_lo = np.where(straddle, 0.0, out_lo)
    out_hi = np.where(straddle, np.maximum(plo, phi), out_hi)
    zero = e == 0
    return np.where(zero, 1.0, out_lo), np.where(zero, 1.0, out_hi)


def mul_bounds(alo, ahi, blo, bhi):
    """Product of intervals ``[alo, ahi] * [blo, bhi]`` (elementwise)."""
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return lo, hi


def monomial_bounds(exps, lo, hi):
    """Range of every monomial over every box.

    Each variable occurs once in a monomial, so the product of per-variable
    power ranges is the exact range of the monomial.

    Returns two ``(B, M)`` arrays.
    """
    exps = np.asarray(exps, dtype=np.int64)
    lo = np.atleast_2d(np.asarray(lo, float))
    hi = np.atleast_2d(np.asarray(hi, float))
    B = lo.shape[0]
    M = exps.shape[0]
    mlo = np.ones((B, M))
    mhi = np.ones((B, M))
    for j in range(exps.shape[1]):
        col = exps[:, j]
        if not col.any():
            continue
        plo, phi = power_bounds(lo[:, j:j + 1], hi[:, j:j + 1], col[None, :])
        mlo, mhi = mul_bounds(mlo, mhi, plo, phi)
    return mlo, mhi


def poly_bounds(coeffs, exps, lo, hi):
    """Naive interval evaluation of a polynomial in monomial form.

    ``coeffs`` may be ``(M,)`` (shared) or ``(B, M)`` (one polynomial per box).
    Returns ``(lo, hi)`` arrays of shape ``(B,)``.
    """
    coeffs = np.asarray(coeffs, float)
    lo = np.atleast_2d(np.asarray(lo, float))
    if coeffs.shape[-1] == 0:
        z = np.zeros(lo.shape[0])
        return z, z.copy()
    mlo, mhi = monomial_bounds(exps, lo, hi)
    if coeffs.ndim == 1:
        coeffs = coeffs[None, :]
    tlo = np.where(coeffs >= 0, coeffs * mlo, coeffs * mhi)
    thi = np.where(coeffs >= 0, coeffs * mhi, coeffs * mlo)
    return tlo.sum(axis=1), thi.sum(axis=1)


def split_boxes(lo, hi, scale):
    """Bisect every box along its widest scaled axis."""
    widths = (hi - lo) / scale
    axis = np.argmax(widths, axis=1)
    rows = np.arange(lo.shape[0])
    mid = 0.5 * (lo[rows, axis] + hi[rows, axis])
    left_hi = hi.copy()
    left_hi[rows, axis] = mid
    right_lo = lo.copy()
    right_lo[rows, axis] = mid
    return np.concatenate([lo, right_lo]), np.concatenate([left_hi, hi])


@dataclass
class Classification:
    """What a branch-and-bound test says about one batch of boxes.

    ``done`` marks boxes that are settled (proved, or irrelevant to the
    condition).  ``witness`` is a confirmed refuting point, if one was found;
    ``witness_value`` its violation.  ``score``/``probe`` optionally report,
    for undecided boxes, an estimated violation and the point it was measured
    at, so the caller can learn where the search got stuck.
    """

    done: np.ndarray
    witness: Optional[np.ndarray] = None
    witness_value: float = 0.0
    witness_info: dict = field(default_factory=dict)
    score: Optional[np.ndarray] = None
    probe: Optional[np.ndarray] = None


@dataclass
class BranchResult:
    status: str  # "proved" | "refuted" | "exhausted"
    processed: int
    witness: Optional[np.ndarray] = None
    witness_value: float = 0.0
    witness_info: dict = field(default_factory=dict)
    worst_point: Optional[np.ndarray] = None
    worst_score: float = -np.inf


def branch_and_bound(lo, hi, classify: Callable[[np.ndarray, np.ndarray], Classification],
                     max_boxes: int, scale=None, chunk: int = 4096) -> BranchResult:
    """Subdivide ``[lo, hi]`` until ``classify`` settles every piece.

    The worklist is processed in fixed-size chunks, last in first out, so the
    search is deterministic and reaches small boxes early.
    """
    lo = np.atleast_2d(np.asarray(lo, float))
    hi = np.atleast_2d(np.asarray(hi, float))
    if scale is None:
        scale = np.maximum(hi.max(axis=0) - lo.min(axis=0), 1e-300)
    stack = [(lo, hi)]
    processed = 0
    worst_point, worst_score = None, -np.inf
    while stack:
        blo, bhi = stack.pop()
        if blo.shape[0] > chunk:
            stack.append((blo[chunk:], bhi[chunk:]))
            blo, bhi = blo[:chunk], bhi[:chunk]
        processed += blo.shape[0]
        c = classify(blo, bhi)
        if c.witness is not None:
            return BranchResult("refuted", processed, c.witness, c.witness_value, c.witness_info,
                                worst_point, worst_score)
        keep = ~c.done
        if c.score is not None and keep.any():
            s = np.where(keep, c.score, -np.inf)
            i = int(np.argmax(s))
            if s[i] > worst_score:
                worst_score = float(s[i])
                worst_point = np.array(c.probe[i])
        if not keep.any():
            continue
        if processed >= max_boxes:
            return BranchResult("exhausted", processed, worst_point=worst_point,
                                worst_score=worst_score)
        stack.append(split_boxes(blo[keep], bhi[keep], scale))
    return BranchResult("proved", processed, worst_point=worst_point, worst_score=worst_score)
