"""Realised multipower variation on an equidistant grid.

For a path X sampled at times i/n the statistic with power vector
(p_1, ..., p_k) is the running sum

    V(X; p_1..p_k)_t = (1 / (n tau^{p_+})) * sum_{i=1}^{floor(nt)-k+1}
                           prod_{j=1}^{k} |X_{(i+j-1)/n} - X_{(i+j-2)/n}|^{p_j}

with p_+ = p_1 + ... + p_k and tau the standard deviation of one grid
increment of the Gaussian core.  ``multipower`` evaluates the sum exactly
(no windowing tricks, no boundary padding; the range is the literal
floor(nt) - k + 1).  ``bsm_scaled_multipower`` swaps the normalization for
the semimartingale-style factor n^{p_+/2 - 1}, and ``rvr`` forms the ratio
(pi/2) V(1,1)/V(2,0) from the bare sums so that the normalization cancels
identically.

A power equal to zero contributes the factor |dX|^0 = 1, including at a
zero increment; it widens the window without touching the product.  That
keeps V(2,0) and V(1,1) aligned on the same index range, which is what the
ratio below requires.

NaN or infinite sample values are a hard error.  Skipping bad records
silently would shift the index range and corrupt the time normalization,
so ingestion has to clean data before it reaches this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .errors import ConditionError, DataError, ValidationError
from .gaussmom import PowerVector, mixed_abs_moment, psi
from .kernels import limit_correlation

__all__ = [
    "MpvResult",
    "RvrResult",
    "multipower",
    "centering",
    "rvr",
    "bsm_scaled_multipower",
    "estimate_tau",
]

# ucp-style statements need the whole trajectory, but reporting every grid
# point at n = 2^20 is quadratic memory for nothing; thin to this many.
MAX_REPORT_POINTS = 1024


def _series_array(series, n):
    """Accept a path bundle or a bare 1-d array; return (values, n)."""
    if hasattr(series, "n") and hasattr(series, "y_path"):
        x = series.y_path if series.y_path is not None else series.g_path
        if x is None:
            raise ValidationError("path bundle carries no simulated path")
        bn = int(series.n)
        if n is not None and int(n) != bn:
            raise ValidationError(
                f"explicit n={n} disagrees with the bundle grid n={bn}")
        return np.asarray(x, dtype=float), bn
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValidationError("series must be one-dimensional")
    if n is None:
        raise ValidationError("grid frequency n is required for a bare array")
    n = int(n)
    if n < 1:
        raise ValidationError("grid frequency must be >= 1")
    return x, n


def _require_finite(x):
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise DataError(
            f"series has a non-finite value at index {bad}; refusing to "
            "skip records")


def _window_products(x, powers):
    """prod_j |dX_{i+j-1}|^{p_j} for every admissible window start."""
    d = np.abs(np.diff(x))
    k = len(powers)
    if d.size < k:
        raise ValidationError(
            f"series too short: {d.size} increments, window needs {k}")
    nw = d.size - k + 1
    terms = np.ones(nw)
    for j, p in enumerate(powers):
        if p == 0.0:
            continue
        terms *= d[j:j + nw] ** p
    return terms


def _default_grid(n, m, first=1):
    """Report times i/n for i = first..m, thinned to MAX_REPORT_POINTS."""
    if m < first:
        raise ValidationError("series too short for any report point")
    span = m - first + 1
    if span <= MAX_REPORT_POINTS:
        idx = np.arange(first, m + 1)
    else:
        idx = np.unique(np.round(
            np.linspace(first, m, MAX_REPORT_POINTS)).astype(np.int64))
    return idx / float(n)


def _term_counts(t_grid, n, k, m):
    """Number of complete windows ending by each report time."""
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t.ndim != 1 or t.size == 0:
        raise ValidationError("t_grid must be a non-empty 1-d array")
    if not np.all(np.isfinite(t)) or np.any(t < 0.0):
        raise ValidationError("report times must be finite and >= 0")
    if np.any(np.diff(t) < 0.0):
        raise ValidationError("report times must be non-decreasing")
    # t is meant to be a grid point; the slack keeps floor() from eating
    # one term to representation error in t*n
    steps = np.floor(t * float(n) + 1e-9).astype(np.int64)
    if steps[-1] > m:
        raise ValidationError(
            f"report time {t[-1]:g} lies beyond the sampled horizon {m}/{n}")
    counts = np.maximum(steps - (k - 1), 0)
    return t, counts


def _running_sums(terms, counts):
    cum = np.cumsum(terms)
    return np.where(counts > 0, cum[np.maximum(counts - 1, 0)], 0.0)


@dataclass(frozen=True)
class MpvResult:
    """Running multipower statistic on a reporting grid.

    ``values`` is the normalized statistic, ``raw`` the bare sums of
    increment-power products (no 1/n, no tau).  ``tau_used`` is None when
    the normalization does not involve tau (semimartingale scaling).
    ``centering`` carries the expected window products of the standardized
    core when a covariance model was supplied: ``rho_n`` from the exact
    grid correlations, ``rho_limit`` from their small-scale limit.
    """

    pv: PowerVector
    n: int
    t_grid: np.ndarray
    values: np.ndarray
    raw: np.ndarray
    tau_used: float | None
    centering: dict | None = None

    def __post_init__(self):
        if not (self.t_grid.shape == self.values.shape == self.raw.shape):
            raise ValidationError("report arrays must share one shape")

    @property
    def final(self):
        """Statistic at the last report time."""
        return float(self.values[-1])


@dataclass(frozen=True)
class RvrResult:
    """Realised variation ratio (pi/2) V(1,1)/V(2,0) on a reporting grid.

    ``psi_center`` holds the two centering values: ``finite_n`` is
    psi(r_n(1)) from the exact grid correlation at lag one, ``limit`` is
    psi(rho(1)) from its limit (None when the model has no known local
    exponent).  ``ci`` is reserved for confidence-band inputs filled in by
    the inference layer.
    """

    n: int
    t_grid: np.ndarray
    rvr_t: np.ndarray
    psi_center: dict
    raw_bipower: np.ndarray
    raw_variance: np.ndarray
    ci: object | None = None


def multipower(series, pv, tau, t_grid=None, n=None, model=None):
    """Normalized running multipower statistic of a sampled path.

    series is a path bundle (n taken from it) or a bare array with the
    grid frequency passed as n.  tau must be positive; for model-driven
    data use the model's increment scale, for external data see
    ``estimate_tau``.  t_grid defaults to the sample grid thinned to
    MAX_REPORT_POINTS.  A covariance model, if given, only fills the
    centering field; it does not touch the statistic.
    """
    if not isinstance(pv, PowerVector):
        pv = PowerVector(tuple(pv))
    x, n = _series_array(series, n)
    _require_finite(x)
    tau = float(tau)
    if not tau > 0.0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    terms = _window_products(x, pv.powers)
    m = x.size - 1
    if t_grid is None:
        t_grid = _default_grid(n, m)
    t, counts = _term_counts(t_grid, n, pv.k, m)
    raw = _running_sums(terms, counts)
    values = raw / (n * tau ** pv.p_plus)
    cent = None
    if model is not None:
        cent = {"rho_n": centering(model, pv, n, "finite_n"),
                "rho_limit": centering(model, pv, n, "limit")}
    return MpvResult(pv=pv, n=n, t_grid=t, values=values, raw=raw,
                     tau_used=tau, centering=cent)


def centering(model, pv, n=None, mode="finite_n"):
    """Expected window product of the standardized Gaussian core.

    Builds the k x k correlation matrix of consecutive scaled increments,
    from the exact grid correlations r_n(|i-j|) in finite_n mode or their
    small-scale limit rho(|i-j|) in limit mode, and evaluates the mixed
    absolute moment.
    """
    if not isinstance(pv, PowerVector):
        pv = PowerVector(tuple(pv))
    if mode == "finite_n":
        if n is None:
            raise ValidationError(
                "finite_n centering needs the grid frequency n")
        lags = model.increment_corr_seq(int(n), pv.k - 1)
    elif mode == "limit":
        alpha = model.alpha
        if alpha is None:
            raise ConditionError(
                "model has no known local exponent; fit one or use "
                "finite_n centering")
        if pv.k == 1:
            lags = np.array([1.0])
        elif alpha >= 2.0:
            # smooth regime: consecutive scaled increments become
            # perfectly correlated
            lags = np.ones(pv.k)
        else:
            lags = limit_correlation(alpha, pv.k - 1).values
    else:
        raise ValidationError(f"unknown centering mode {mode!r}")
    return float(mixed_abs_moment(pv, toeplitz(lags)))


def rvr(series, model, n=None, t_grid=None):
    """Realised variation ratio with its centering constants.

    Both statistics run over windows of length two, V(1,1) with powers
    (1,1) and V(2,0) with powers (2,0), so they share the index range
    1..floor(nt)-1 and the common factor 1/(n tau^2) cancels; the ratio is
    taken on the bare sums.  The default grid therefore starts at 2/n, the
    first time a complete window exists.  A vanishing denominator on the
    requested grid is an error, not a NaN.
    """
    x, n = _series_array(series, n)
    _require_finite(x)
    bip = _window_products(x, (1.0, 1.0))
    sqr = _window_products(x, (2.0, 0.0))
    m = x.size - 1
    if t_grid is None:
        t_grid = _default_grid(n, m, first=2)
    t, counts = _term_counts(t_grid, n, 2, m)
    raw11 = _running_sums(bip, counts)
    raw20 = _running_sums(sqr, counts)
    if np.any(raw20 <= 0.0):
        where = float(t[np.flatnonzero(raw20 <= 0.0)[0]])
        raise DataError(
            f"realised variance vanishes at t={where:g}; the ratio is "
            "undefined there")
    ratio = (math.pi / 2.0) * raw11 / raw20
    centers = {"finite_n": psi(model.increment_corr(n, 1)), "limit": None}
    if model.alpha is not None:
        rho1 = 1.0 if model.alpha >= 2.0 else limit_correlation(model.alpha, 1)[1]
        centers["limit"] = psi(rho1)
    return RvrResult(n=n, t_grid=t, rvr_t=ratio, psi_center=centers,
                     raw_bipower=raw11, raw_variance=raw20)


def bsm_scaled_multipower(series, pv, n=None, t_grid=None):
    """Multipower sums under the semimartingale scaling n^{p_+/2 - 1}.

    The baseline comparison statistic: for a semimartingale it converges
    to a multiple of integrated |volatility|^{p_+}, for a rougher or
    smoother path it degenerates, which is what makes the pair of
    normalizations diagnostic.
    """
    if not isinstance(pv, PowerVector):
        pv = PowerVector(tuple(pv))
    x, n = _series_array(series, n)
    _require_finite(x)
    terms = _window_products(x, pv.powers)
    m = x.size - 1
    if t_grid is None:
        t_grid = _default_grid(n, m)
    t, counts = _term_counts(t_grid, n, pv.k, m)
    raw = _running_sums(terms, counts)
    values = raw * float(n) ** (0.5 * pv.p_plus - 1.0)
    return MpvResult(pv=pv, n=n, t_grid=t, values=values, raw=raw,
                     tau_used=None, centering=None)


def estimate_tau(series, n=None):
    """Increment scale from the data: sqrt of the mean squared increment.

    For externally observed series with no covariance model attached.
    Reports should flag the value as an estimate; it is consistent for
    the increment standard deviation when volatility integrates to one,
    and biased by the average volatility level otherwise.
    """
    x, n = _series_array(series, n)
    _require_finite(x)
    d = np.diff(x)
    if d.size == 0:
        raise ValidationError("series too short to estimate tau")
    v = float(np.mean(d * d))
    if v <= 0.0:
        raise DataError(
            "series has zero quadratic variation; tau cannot be estimated")
    return math.sqrt(v)
