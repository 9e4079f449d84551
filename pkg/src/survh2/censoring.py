"""Censoring-distribution estimation and synthetic survival variables.

A right-censored trait enters the downstream moment equations through two
derived per-subject quantities whose expectations equal the first two
moments of the underlying uncensored trait. Both are plug-in functionals
of the censoring distribution G, which is estimated here by Kaplan-Meier
with the roles of events and censorings swapped: a censored observation
is an "event" for G, an observed event is "censored" for G.

The same transform is applied to every subject regardless of its event
indicator, so the decomposition of the synthetic outer-product matrix
into a diagonal part plus a rank-one part is exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputFormatError, NumericalError

__all__ = [
    "CensoredSample",
    "CensoringCdf",
    "SyntheticDecomposition",
    "default_cap",
    "fit_censoring_cdf",
    "fit_censoring_arrays",
    "synthetic_first",
    "synthetic_second",
    "build_synthetic",
    "build_synthetic_arrays",
]


@dataclass(frozen=True)
class CensoredSample:
    """One follow-up record: observed time (on the analysis scale) and
    event indicator, 1 if the event was observed and 0 if censored."""

    u: float
    delta: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.u):
            raise InputFormatError(f"non-finite observation time {self.u!r}")
        if self.delta not in (0, 1):
            raise InputFormatError(f"event indicator must be 0 or 1, got {self.delta!r}")


@dataclass(frozen=True)
class CensoringCdf:
    """Right-continuous step estimate of the censoring distribution.

    ``cdf_values[i]`` is the value of G on ``[jump_times[i], jump_times[i+1])``;
    G is 0 before the first jump and constant at ``cdf_values[-1]`` after the
    last. Values are clamped to ``cap`` so the hazard-ratio integrand
    G/(1-G) stays bounded.
    """

    jump_times: np.ndarray
    cdf_values: np.ndarray
    cap: float

    def __post_init__(self) -> None:
        jt = np.asarray(self.jump_times, dtype=float)
        cv = np.asarray(self.cdf_values, dtype=float)
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "cdf_values", cv)
        if jt.ndim != 1 or cv.shape != jt.shape:
            raise InputFormatError("jump times and values must be 1-d arrays of equal length")
        if jt.size and np.any(np.diff(jt) <= 0):
            raise InputFormatError("jump times must be strictly increasing")
        if not 0.0 < self.cap < 1.0:
            raise InputFormatError(f"cap must lie in (0, 1), got {self.cap}")
        if cv.size and (np.any(np.diff(cv) < 0) or cv[0] < 0 or cv[-1] > self.cap):
            raise InputFormatError("cdf values must be non-decreasing within [0, cap]")

    def value_at(self, t):
        """Evaluate G(t) (right-continuous) at scalar or array ``t``."""
        t = np.asarray(t, dtype=float)
        if self.jump_times.size == 0:
            return np.zeros_like(t)
        idx = np.searchsorted(self.jump_times, t, side="right") - 1
        vals = np.where(idx >= 0, self.cdf_values[np.maximum(idx, 0)], 0.0)
        return vals if vals.ndim else float(vals)


@dataclass(frozen=True)
class SyntheticDecomposition:
    """First and second synthetic moments plus the diagonal adjustment
    d = y2 - y1**2 used by the streaming accumulator."""

    y1: np.ndarray
    y2: np.ndarray
    d: np.ndarray


def default_cap(n: int) -> float:
    """Default clamp for G: 1 - 1/(2n) for a sample of size n."""
    if n < 1:
        raise InputFormatError("sample size must be positive")
    return 1.0 - 1.0 / (2.0 * n)


def fit_censoring_arrays(u, delta, cap: float | None = None) -> CensoringCdf:
    """Kaplan-Meier estimate of the censoring distribution from arrays.

    Parameters
    ----------
    u : array of observed times (event or censoring, whichever came first).
    delta : array of event indicators; 1 = event observed, 0 = censored.
    cap : clamp for the estimated cdf. Defaults to ``default_cap(len(u))``.

    Censored observations are the "events" of G. At tied times, observed
    events leave the risk set before censorings at that time are counted,
    matching the convention that an event at t precedes censoring at t.
    """
    u = np.asarray(u, dtype=float)
    delta = np.asarray(delta)
    if u.ndim != 1 or delta.shape != u.shape:
        raise InputFormatError("times and indicators must be 1-d arrays of equal length")
    if u.size == 0:
        raise InputFormatError("empty sample")
    if not np.all(np.isfinite(u)):
        raise InputFormatError("non-finite observation times")
    if not np.isin(delta, (0, 1)).all():
        raise InputFormatError("event indicators must be 0 or 1")
    if cap is None:
        cap = default_cap(u.size)
    if not 0.0 < cap < 1.0:
        raise InputFormatError(f"cap must lie in (0, 1), got {cap}")
    if np.all(delta == 0):
        raise NumericalError("all observations are censored; the trait carries no events")

    times, inverse = np.unique(u, return_inverse=True)
    cens_at = np.bincount(inverse, weights=(delta == 0).astype(float), minlength=times.size)
    evt_at = np.bincount(inverse, weights=(delta == 1).astype(float), minlength=times.size)
    total_at = cens_at + evt_at
    # Subjects with time >= t, minus observed events tied at t (they exit first).
    at_risk = total_at[::-1].cumsum()[::-1] - evt_at
    has_jump = cens_at > 0
    factors = np.ones_like(times)
    factors[has_jump] = 1.0 - cens_at[has_jump] / at_risk[has_jump]
    survival = np.cumprod(factors)
    g = np.minimum(1.0 - survival, cap)
    return CensoringCdf(times[has_jump], g[has_jump], cap)


def fit_censoring_cdf(samples, cap: float | None = None) -> CensoringCdf:
    """Kaplan-Meier estimate of the censoring distribution.

    ``samples`` is a sequence of :class:`CensoredSample`. See
    :func:`fit_censoring_arrays` for the array-based equivalent.
    """
    samples = list(samples)
    u = np.array([s.u for s in samples], dtype=float)
    delta = np.array([s.delta for s in samples], dtype=np.int8)
    return fit_censoring_arrays(u, delta, cap)


def _integral_tables(g: CensoringCdf):
    """Prefix sums of the step integrals of G/(1-G) against dt and 2t dt."""
    ratio = g.cdf_values / (1.0 - g.cdf_values)
    t = g.jump_times
    if t.size == 0:
        return ratio, np.zeros(0), np.zeros(0)
    seg_first = np.zeros(t.size)
    seg_second = np.zeros(t.size)
    if t.size > 1:
        seg_first[1:] = np.cumsum(ratio[:-1] * np.diff(t))
        seg_second[1:] = np.cumsum(ratio[:-1] * np.diff(t * t))
    return ratio, seg_first, seg_second


def _synthetic_pair(u, g: CensoringCdf):
    """Vectorized first and second synthetic moments for times ``u``."""
    u = np.asarray(u, dtype=float)
    ratio, seg_first, seg_second = _integral_tables(g)
    y1 = u.copy()
    y2 = u * u
    if g.jump_times.size == 0:
        return y1, y2
    idx = np.searchsorted(g.jump_times, u, side="right") - 1
    inside = idx >= 0
    ix = idx[inside]
    tx = g.jump_times[ix]
    y1[inside] += seg_first[ix] + ratio[ix] * (u[inside] - tx)
    y2[inside] += seg_second[ix] + ratio[ix] * (u[inside] * u[inside] - tx * tx)
    return y1, y2


def synthetic_first(u: float, delta: int, g: CensoringCdf) -> float:
    """First synthetic moment u + int_{-inf}^{u} G/(1-G) dt.

    The transform is the same for event and censored records (``delta``
    is accepted for symmetry with per-sample records but does not enter).
    """
    y1, _ = _synthetic_pair(np.array([u], dtype=float), g)
    return float(y1[0])


def synthetic_second(u: float, delta: int, g: CensoringCdf) -> float:
    """Second synthetic moment u**2 + int_{-inf}^{u} 2 t G/(1-G) dt."""
    _, y2 = _synthetic_pair(np.array([u], dtype=float), g)
    return float(y2[0])


def build_synthetic(samples, g: CensoringCdf) -> SyntheticDecomposition:
    """Apply the synthetic transform to every sample.

    Returns the per-subject first and second synthetic moments together
    with the diagonal adjustment d = y2 - y1**2, so the synthetic
    outer-product matrix is exactly diag(d) + y1 y1'.
    """
    if isinstance(samples, SyntheticDecomposition):
        raise InputFormatError("expected censored samples, got an existing decomposition")
    samples = list(samples)
    u = np.array([s.u for s in samples], dtype=float)
    y1, y2 = _synthetic_pair(u, g)
    return SyntheticDecomposition(y1=y1, y2=y2, d=y2 - y1 * y1)


def build_synthetic_arrays(u, g: CensoringCdf) -> SyntheticDecomposition:
    """Array-based equivalent of :func:`build_synthetic`."""
    y1, y2 = _synthetic_pair(np.asarray(u, dtype=float), g)
    return SyntheticDecomposition(y1=y1, y2=y2, d=y2 - y1 * y1)
