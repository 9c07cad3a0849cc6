"""Moving-average kernels and the second-order structure they induce.

A kernel g (vanishing on t <= 0, square integrable) determines the Gaussian
core of the process through the increment variance function

    rbar(t) = int_0^t g(x)^2 dx + int_0^infty (g(t+x) - g(x))^2 dx,

its small-t exponent alpha, the discrete increment correlations r_n(j), their
limit rho(j), and the spectral-shift measure whose tail decay decides whether
the central limit theory applies. Truncated kernels carry a subtlety worth
spelling out once: a jump of g at the truncation point feeds a term linear in
t into rbar ("echo" of the jump), so for x^delta 1_(0,1] with delta > 0 the
small-t exponent is 1, not 2*delta+1, and the shift measure piles up mass near
the jump location instead of near 0. The closed forms below keep that echo
explicit instead of relying on quadrature to resolve it.
"""

from __future__ import annotations

import configparser
import io
import math
import threading
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import gamma as _gamma_fn, kv as _bessel_kv

from .errors import QuadratureError, ValidationError

__all__ = [
    "QuadratureConfig", "KernelSpec", "PowerLawKernel", "GammaKernel",
    "ExponentialKernel", "TabulatedKernel", "eval_kernel", "CovarianceModel",
    "build_covariance", "rbar_by_quadrature", "brownian_covariance",
    "fractional_covariance", "tau_n", "r_n", "LimitCorrelation",
    "limit_correlation", "PiTail", "pi_tail", "ConditionReport",
    "check_conditions", "gamma_kernel_small_t", "fit_alpha",
    "kernel_to_config", "kernel_from_config", "tabulated_from_csv",
]


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances for the improper integrals behind rbar and the shift
    measure. rbar feeds ratios that amplify error near t=0, hence the
    tight absolute tolerance."""

    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    max_panels: int = 200

    def __post_init__(self):
        if self.abs_tol <= 0 or self.rel_tol <= 0 or self.max_panels < 10:
            raise ValidationError("quadrature config out of range")


_DEFAULT_CFG = QuadratureConfig()


def _quad(f, a, b, cfg, points=None):
    # scipy complains loudly about kinked integrands even when the result is
    # fine; correctness is enforced by the two-route probes instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, epsabs=cfg.abs_tol,
                                  epsrel=cfg.rel_tol, limit=cfg.max_panels,
                                  points=points)
    if not math.isfinite(val):
        raise QuadratureError(f"integral over ({a}, {b}) did not converge")
    return val


# ---------------------------------------------------------------------------
# kernel families

class KernelSpec:
    """Base for kernel families; g(t) = 0 for t <= 0 in every family."""

    family = "abstract"
    support_hint = None

    def eval(self, t):
        arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(arr)
        pos = arr > 0
        if np.any(pos):
            out[pos] = self._eval_pos(arr[pos])
        if np.ndim(t) == 0:
            return float(out[0])
        return out

    def _eval_pos(self, t):
        raise NotImplementedError

    def _validate_hint(self):
        if self.support_hint is None:
            return
        h = float(self.support_hint)
        if not h > 0:
            raise ValidationError(
                f"support hint must be positive, got {self.support_hint}")
        own = self._family_support()
        if math.isfinite(own) and h < own:
            raise ValidationError(
                f"support hint {h} is below the kernel's own support {own}")
        object.__setattr__(self, "support_hint", h)

    def _family_support(self):
        return math.inf

    @property
    def support(self):
        """Upper end of the kernel support (inf when unbounded); a user
        hint takes precedence, which is how unbounded families get a finite
        integration range."""
        if self.support_hint is not None:
            return self.support_hint
        return self._family_support()

    def config_items(self):
        raise NotImplementedError

    def _hint_items(self):
        if self.support_hint is None:
            return {}
        return {"support_hint": repr(self.support_hint)}


@dataclass(frozen=True)
class PowerLawKernel(KernelSpec):
    """g(x) = x^delta on (0, 1], zero elsewhere."""

    delta: float
    support_hint: float | None = field(default=None, kw_only=True)

    family = "power_law"

    def __post_init__(self):
        d = float(self.delta)
        if not (-0.5 < d < 0.5) or d == 0.0:
            raise ValidationError(
                f"power-law exponent must lie in (-1/2, 1/2) excluding 0, "
                f"got {self.delta}")
        object.__setattr__(self, "delta", d)
        self._validate_hint()

    def _eval_pos(self, t):
        return np.where(t <= 1.0, t ** self.delta, 0.0)

    def _family_support(self):
        return 1.0

    def config_items(self):
        return {"family": self.family, "delta": repr(self.delta),
                **self._hint_items()}


@dataclass(frozen=True)
class GammaKernel(KernelSpec):
    """g(t) = t^(nu-1) exp(-rate*t); nu > 1/2 keeps g square integrable."""

    nu: float
    rate: float
    support_hint: float | None = field(default=None, kw_only=True)

    family = "gamma"

    def __post_init__(self):
        nu, rate = float(self.nu), float(self.rate)
        if nu <= 0.5:
            raise ValidationError(f"shape must exceed 1/2, got {self.nu}")
        if rate <= 0:
            raise ValidationError(f"decay rate must be positive, got {self.rate}")
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "rate", rate)
        self._validate_hint()

    def _eval_pos(self, t):
        return t ** (self.nu - 1.0) * np.exp(-self.rate * t)

    def effective_support(self):
        """x beyond which g is below 1e-12 of its reference size (the peak
        for shapes above 1, the value at 1/rate otherwise, where the kernel
        is unbounded at 0)."""
        if self.support_hint is not None:
            return self.support_hint
        nu, lam = self.nu, self.rate
        ref = (nu - 1.0) / lam if nu > 1.0 else 1.0 / lam
        gref = float(self.eval(ref))
        x = ref + 1.0 / lam
        while float(self.eval(x)) > 1e-12 * gref and x < 1e7:
            x *= 2.0
        return x

    def config_items(self):
        return {"family": self.family, "nu": repr(self.nu),
                "rate": repr(self.rate), **self._hint_items()}


@dataclass(frozen=True)
class ExponentialKernel(KernelSpec):
    """g(t) = exp(-rate*t) on (0, 1); the unit jump at both ends makes this
    the canonical example of a degenerate shift measure."""

    rate: float
    support_hint: float | None = field(default=None, kw_only=True)

    family = "exponential"

    def __post_init__(self):
        rate = float(self.rate)
        if rate <= 0:
            raise ValidationError(f"decay rate must be positive, got {self.rate}")
        object.__setattr__(self, "rate", rate)
        self._validate_hint()

    def _eval_pos(self, t):
        return np.where(t < 1.0, np.exp(-self.rate * t), 0.0)

    def _family_support(self):
        return 1.0

    def config_items(self):
        return {"family": self.family, "rate": repr(self.rate),
                **self._hint_items()}


@dataclass(frozen=True)
class TabulatedKernel(KernelSpec):
    """Kernel given on a grid; linear interpolation in between.

    Queries beyond the last grid point raise unless extrapolation="zero"
    (or the tabulated values already end at 0, which means the same thing).
    """

    grid: np.ndarray
    values: np.ndarray
    extrapolation: str | None = None
    support_hint: float | None = field(default=None, kw_only=True)

    family = "tabulated"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or len(g) < 2:
            raise ValidationError("tabulated kernel needs matching 1-d arrays")
        if not np.all(np.diff(g) > 0):
            raise ValidationError("tabulated grid must be strictly increasing")
        if g[0] < 0:
            raise ValidationError("tabulated grid must be non-negative")
        if not np.all(np.isfinite(v)):
            raise ValidationError("tabulated values must be finite")
        if self.extrapolation not in (None, "zero"):
            raise ValidationError(
                f"unknown extrapolation policy {self.extrapolation!r}")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        self._validate_hint()

    def _eval_pos(self, t):
        if self.extrapolation is None and np.any(t > self.grid[-1]) \
                and self.values[-1] != 0.0:
            raise ValidationError(
                "query beyond the tabulated grid without an extrapolation "
                "policy")
        return np.interp(t, self.grid, self.values, left=0.0, right=0.0)

    def _family_support(self):
        return float(self.grid[-1])

    def config_items(self):
        return {"family": self.family,
                "grid": ",".join(repr(x) for x in self.grid),
                "values": ",".join(repr(x) for x in self.values),
                "extrapolation": self.extrapolation or "none",
                **self._hint_items()}


def eval_kernel(spec, t):
    """g(t) for the given kernel; zero on t <= 0."""
    return spec.eval(t)


def tabulated_from_csv(path, extrapolation="zero"):
    """Two-column CSV (t, g(t)) with strictly increasing t."""
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read kernel table {path}: {exc}") from exc
    if data.shape[1] != 2:
        raise ValidationError("kernel table must have exactly two columns")
    return TabulatedKernel(data[:, 0], data[:, 1], extrapolation=extrapolation)


# ---------------------------------------------------------------------------
# serialization

def kernel_to_config(spec):
    """Plain-text key=value form, one option per line under [kernel]."""
    cp = configparser.ConfigParser()
    cp["kernel"] = spec.config_items()
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def kernel_from_config(text_or_items):
    """Inverse of kernel_to_config; also accepts a dict of options."""
    if isinstance(text_or_items, dict):
        items = {k.lower(): v for k, v in text_or_items.items()}
    else:
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text_or_items)
        except configparser.Error as exc:
            raise ValidationError(f"bad kernel config: {exc}") from exc
        if not cp.has_section("kernel"):
            raise ValidationError("kernel config must have a [kernel] section")
        items = dict(cp.items("kernel"))
    family = items.get("family", "").lower()
    try:
        hint = items.get("support_hint", "none").lower()
        hint = None if hint in ("none", "inf") else float(hint)
        if family == "power_law":
            return PowerLawKernel(float(items["delta"]), support_hint=hint)
        if family == "gamma":
            return GammaKernel(float(items["nu"]), float(items["rate"]),
                               support_hint=hint)
        if family == "exponential":
            return ExponentialKernel(float(items["rate"]), support_hint=hint)
        if family == "tabulated":
            ex = items.get("extrapolation", "none")
            return TabulatedKernel(
                np.array([float(x) for x in items["grid"].split(",")]),
                np.array([float(x) for x in items["values"].split(",")]),
                extrapolation=None if ex == "none" else ex,
                support_hint=hint)
    except KeyError as exc:
        raise ValidationError(f"kernel config missing {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"bad kernel parameter: {exc}") from exc
    raise ValidationError(f"unknown kernel family {family!r}")


# ---------------------------------------------------------------------------
# increment variance function, family by family

class _PowerLawRbar:
    """Closed decomposition of rbar for the truncated power-law kernel.

    With a = 2*delta+1 and D(K) = int_0^K ((1+w)^delta - w^delta)^2 dw,

        rbar(t) = t^a/a + t^a D((1-t)/t) + (1 - (1-t)^a)/a,   0 < t < 1,

    the three terms being the young-end mass, the interior, and the echo of
    the truncation jump. D(K) is evaluated through substitutions that keep
    every integrand bounded: for K <= 1 directly (w = v^2 tames w^delta at
    0), for K > 1 as D(inf) - tail, the tail mapped to (0,1) by w -> 1/w.
    """

    def __init__(self, delta, cfg):
        self.delta = delta
        self.a = 2.0 * delta + 1.0
        self.cfg = cfg
        self.c_inf = self._d_direct(1.0) + self._tail(1.0)

    def _tail(self, eps):
        # int_0^eps w^(-2d-2) ((1+w)^d - 1)^2 dw, eps <= 1; integrand -> 0
        # at 0 for either sign of the exponent
        if eps <= 0:
            return 0.0
        if eps > 1.0:
            raise ValueError("tail substitution only valid on (0, 1]")
        d = self.delta

        def f(w):
            if w == 0.0:
                return 0.0
            return w ** (-2 * d - 2) * ((1.0 + w) ** d - 1.0) ** 2

        return _quad(f, 0.0, eps, self.cfg)

    def _d_direct(self, k):
        # D(K) for K <= 1
        d, a = self.delta, self.a
        j = _quad(lambda v: v ** (2 * d + 1) * (1 + v * v) ** d,
                  0.0, math.sqrt(k), self.cfg)
        return ((1 + k) ** a - 1.0) / a + k ** a / a - 4.0 * j

    def _d(self, k):
        if k <= 1.0:
            return self._d_direct(k)
        return self.c_inf - self._tail(1.0 / k)

    def __call__(self, t):
        a = self.a
        if t >= 1.0:
            return 2.0 / a
        interior = t ** a * self._d((1.0 - t) / t)
        return t ** a / a + interior + (1.0 - (1.0 - t) ** a) / a


def _gamma_g_norm_sq(nu, lam):
    return _gamma_fn(2 * nu - 1.0) / (2 * lam) ** (2 * nu - 1.0)


def _gamma_corr(nu, lam, t):
    """Correlation of the Gaussian core for the gamma kernel, in closed form
    through the modified Bessel function of the second kind."""
    eta = nu - 0.5
    x = lam * np.atleast_1d(np.asarray(t, dtype=float))
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    vals = xp ** eta * _bessel_kv(eta, xp) / (2 ** (eta - 1) * _gamma_fn(eta))
    # kv underflows to 0 for large arguments, which is also the right limit
    out[pos] = np.where(np.isfinite(vals), vals, 0.0)
    if np.ndim(t) == 0:
        return float(out[0])
    return out


class _ExponentialRbar:
    """Piecewise closed form; both truncation jumps show up as terms linear
    in t, so the small-t slope is (1 + e^(-2 rate)) * t."""

    def __init__(self, rate):
        self.rate = rate
        self.g_norm_sq = (1.0 - math.exp(-2 * rate)) / (2 * rate)

    def __call__(self, t):
        lam = self.rate
        if t >= 1.0:
            return 2.0 * self.g_norm_sq
        young = (1.0 - math.exp(-2 * lam * t)) / (2 * lam)
        interior = ((1.0 - math.exp(-lam * t)) ** 2
                    * (1.0 - math.exp(-2 * lam * (1.0 - t))) / (2 * lam))
        echo = (math.exp(-2 * lam * (1.0 - t)) - math.exp(-2 * lam)) / (2 * lam)
        return young + interior + echo


_GL3_POS = np.array([0.5 - 0.5 * math.sqrt(0.6), 0.5, 0.5 + 0.5 * math.sqrt(0.6)])
_GL3_WT = np.array([5.0, 8.0, 5.0]) / 18.0


def _cell_quadrature(f, knots):
    """Integral of f over [knots[0], knots[-1]], 3-point Gauss per cell.

    Exact when f is polynomial (degree <= 5) between consecutive knots, the
    case for squares of piecewise-linear functions whose breakpoints all
    appear in `knots`. The nodes stay strictly inside each cell, so a
    one-sided jump sitting exactly on a knot cannot leak into the
    neighbouring cell's panel.
    """
    knots = np.asarray(knots, dtype=float)
    if len(knots) < 2:
        return 0.0
    w = np.diff(knots)
    x = knots[:-1, None] + _GL3_POS[None, :] * w[:, None]
    return float(np.sum(w[:, None] * _GL3_WT[None, :] * f(x)))


def _tab_knots(spec, lo, hi, shift=0.0):
    """Sorted breakpoints of x -> (g(x - shift) - g(x))^2 inside [lo, hi]."""
    pieces = [spec.grid]
    if shift != 0.0:
        pieces.append(spec.grid + shift)
    k = np.concatenate([[lo, hi]] + pieces)
    k = np.unique(k[(k >= lo) & (k <= hi)])
    return k


def _tab_shift_mass(spec, h, lo, hi):
    """int_lo^hi (g(x-h) - g(x))^2 dx for a tabulated kernel, exactly."""
    if hi <= lo:
        return 0.0
    g = spec.eval
    return _cell_quadrature(lambda x: (g(x - h) - g(x)) ** 2,
                            _tab_knots(spec, lo, hi, shift=h))


class _TabulatedRbar:
    """Increment variance of a tabulated kernel, cell by cell.

    Linear interpolation makes g^2 and squared differences of g piecewise
    quadratic, so the per-cell Gauss rule on the merged breakpoints is exact
    and the adaptive integrator (which fights every kink) is only kept as
    the cross-check route.
    """

    def __init__(self, spec):
        self.spec = spec
        self.upper = float(spec.grid[-1])
        self.g_norm_sq = _cell_quadrature(lambda x: spec.eval(x) ** 2,
                                          spec.grid)

    def __call__(self, t):
        g = self.spec.eval
        young = _cell_quadrature(lambda x: g(x) ** 2,
                                 _tab_knots(self.spec, 0.0,
                                            min(t, self.upper)))
        if t >= self.upper:
            return young + self.g_norm_sq
        return young + _tab_shift_mass(self.spec, t, t, self.upper + t)


def rbar_by_quadrature(spec, t, cfg=None):
    """rbar(t) straight from the defining integrals.

    This is the slow reference route used to validate the closed forms;
    singular integrands (power law with negative exponent) are tamed by the
    substitution x = u^(1/(2*delta+1)).
    """
    cfg = cfg or _DEFAULT_CFG
    t = float(t)
    if t <= 0:
        return 0.0
    if isinstance(spec, PowerLawKernel):
        d, a = spec.delta, 2 * spec.delta + 1.0
        young = min(t, 1.0) ** a / a
        if t >= 1.0:
            return young + 1.0 / a
        hi = (1.0 - t) ** a

        def f(u):
            x = u ** (1.0 / a)
            return ((x + t) ** d - x ** d) ** 2 * x ** (1.0 - a) / a

        interior = _quad(f, 0.0, hi, cfg)
        echo = (1.0 - (1.0 - t) ** a) / a
        return young + interior + echo
    g = spec.eval
    if isinstance(spec, GammaKernel):
        upper = spec.effective_support()
    elif math.isfinite(spec.support):
        upper = spec.support
    else:
        upper = 1e6
    young = _quad(lambda x: g(x) ** 2, 0.0, min(t, upper), cfg)
    if t >= upper:
        return young + _quad(lambda x: g(x) ** 2, 0.0, upper, cfg)
    pts = sorted({p - t for p in (1.0, upper) if 0.0 < p - t < upper})
    diff = _quad(lambda x: (g(x + t) - g(x)) ** 2, 0.0, upper, cfg,
                 points=pts or None)
    return young + diff


@dataclass
class CovarianceModel:
    """Second-order summary of the Gaussian core.

    rbar(t) is the variance of an increment over a time gap t; g_norm_sq the
    squared kernel norm; alpha the local exponent of rbar at 0 (None when
    unknown). Evaluations are memoized behind a lock, so sharing a model
    across threads is safe and repeated grid sweeps are cheap.
    """

    kernel: object
    g_norm_sq: float | None
    alpha: float | None
    quadrature_cfg: QuadratureConfig = field(default_factory=QuadratureConfig)
    _rbar_fn: object = None
    _memo: dict = field(default_factory=dict, repr=False)
    _lock: object = field(default_factory=threading.Lock, repr=False)

    def rbar(self, t):
        t = float(t)
        if t <= 0.0:
            return 0.0
        with self._lock:
            hit = self._memo.get(t)
        if hit is not None:
            return hit
        val = self._rbar_fn(t)
        if val < 0.0:
            if val < -1e-12 * max(1.0, abs(val)):
                raise QuadratureError(f"negative increment variance at t={t}")
            val = 0.0
        with self._lock:
            self._memo[t] = val
        return val

    def r(self, t):
        """Correlation of the core at time gap t (needs a finite kernel norm)."""
        if self.g_norm_sq is None:
            raise ValidationError(
                "this covariance model has no kernel norm; correlations are "
                "not defined")
        return 1.0 - self.rbar(t) / (2.0 * self.g_norm_sq)

    def tau(self, n):
        if n < 1:
            raise ValidationError("grid frequency must be >= 1")
        return math.sqrt(self.rbar(1.0 / n))

    def increment_corr(self, n, j):
        j = int(j)
        if j < 0:
            raise ValidationError("lag must be >= 0")
        if j == 0:
            return 1.0
        nf = float(n)
        num = (self.rbar((j + 1) / nf) + self.rbar(abs(j - 1) / nf)
               - 2.0 * self.rbar(j / nf))
        val = num / (2.0 * self.rbar(1.0 / nf))
        return min(1.0, max(-1.0, val))

    def increment_corr_seq(self, n, j_max):
        return np.array([self.increment_corr(n, j) for j in range(j_max + 1)])


def tau_n(model, n):
    """Scaling factor: standard deviation of one grid increment."""
    return model.tau(n)


def r_n(model, n, j):
    """Correlation between grid increments j apart, clipped to [-1, 1]."""
    return model.increment_corr(n, j)


def build_covariance(spec, cfg=None):
    """Covariance model for a kernel, using the closed form where one exists
    and adaptive quadrature otherwise. A light consistency probe against the
    direct-integral route guards the closed forms."""
    cfg = cfg or _DEFAULT_CFG
    if isinstance(spec, PowerLawKernel):
        a = 2 * spec.delta + 1.0
        model = CovarianceModel(
            kernel=spec, g_norm_sq=1.0 / a,
            alpha=a if spec.delta < 0 else 1.0,
            quadrature_cfg=cfg, _rbar_fn=_PowerLawRbar(spec.delta, cfg))
    elif isinstance(spec, GammaKernel):
        gns = _gamma_g_norm_sq(spec.nu, spec.rate)
        model = CovarianceModel(
            kernel=spec, g_norm_sq=gns,
            alpha=min(2.0 * spec.nu - 1.0, 2.0),
            quadrature_cfg=cfg,
            _rbar_fn=lambda t: 2.0 * gns * (1.0 - _gamma_corr(
                spec.nu, spec.rate, t)))
    elif isinstance(spec, ExponentialKernel):
        fn = _ExponentialRbar(spec.rate)
        model = CovarianceModel(kernel=spec, g_norm_sq=fn.g_norm_sq,
                                alpha=1.0, quadrature_cfg=cfg, _rbar_fn=fn)
    elif isinstance(spec, TabulatedKernel):
        if spec.extrapolation is None and spec.values[-1] != 0.0:
            raise ValidationError(
                "building a covariance model integrates the kernel over "
                "(0, inf); a tabulated kernel needs extrapolation='zero' or "
                "a final value of 0")
        fn = _TabulatedRbar(spec)
        if fn.g_norm_sq <= 0:
            raise ValidationError("tabulated kernel has zero norm")
        model = CovarianceModel(
            kernel=spec, g_norm_sq=fn.g_norm_sq, alpha=None,
            quadrature_cfg=cfg, _rbar_fn=fn)
    else:
        raise ValidationError(f"unknown kernel spec {type(spec).__name__}")

    scale = min(spec.support, 1.0)
    for t in (0.037 * scale, 0.41 * scale):
        closed = model.rbar(t)
        direct = rbar_by_quadrature(spec, t, cfg)
        if abs(closed - direct) > 1e-6 * max(abs(closed), abs(direct), 1e-12):
            raise QuadratureError(
                f"closed-form and integral routes disagree at t={t}: "
                f"{closed} vs {direct}")
    if isinstance(spec, TabulatedKernel):
        fit = fit_alpha(model)
        model.alpha = fit.alpha
    return model


def brownian_covariance():
    """Synthetic model with rbar(t) = t: independent increments at every n."""
    return CovarianceModel(kernel=None, g_norm_sq=None, alpha=1.0,
                           _rbar_fn=lambda t: t)


def fractional_covariance(alpha):
    """Synthetic model with rbar(t) = t^alpha, alpha in (0,2): the grid
    increments have exactly the limit correlations at every n."""
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise ValidationError(f"exponent must lie in (0, 2), got {alpha}")
    return CovarianceModel(kernel=None, g_norm_sq=None, alpha=alpha,
                           _rbar_fn=lambda t: t ** alpha)


# ---------------------------------------------------------------------------
# limit correlations

@dataclass(frozen=True)
class LimitCorrelation:
    """rho(j) = ((j+1)^alpha - 2 j^alpha + (j-1)^alpha) / 2, the limit of
    the grid increment correlations r_n(j)."""

    alpha: float
    values: np.ndarray

    def __getitem__(self, j):
        return self.values[j]

    def __len__(self):
        return len(self.values)


def _rho_far(alpha, j):
    """Series form of rho(j), accurate where the direct second difference
    loses precision to cancellation (large j)."""
    s = alpha - 2.0
    lead = 0.5 * alpha * (alpha - 1.0) * j ** s
    c2 = s * (s - 1.0) / 12.0
    c4 = s * (s - 1.0) * (s - 2.0) * (s - 3.0) / 360.0
    return lead * (1.0 + c2 / j ** 2 + c4 / j ** 4)


def limit_correlation(alpha, j_max):
    alpha = float(alpha)
    if not 0.0 < alpha < 2.0:
        raise ValidationError(f"exponent must lie in (0, 2), got {alpha}")
    j_max = int(j_max)
    if j_max < 1:
        raise ValidationError("j_max must be >= 1")
    vals = np.empty(j_max + 1)
    vals[0] = 1.0
    near = np.arange(1, min(j_max, 1000) + 1, dtype=float)
    vals[1:len(near) + 1] = 0.5 * ((near + 1) ** alpha - 2 * near ** alpha
                                   + (near - 1) ** alpha)
    if j_max > 1000:
        far = np.arange(1001, j_max + 1, dtype=float)
        vals[1001:] = _rho_far(alpha, far)
    if alpha == 1.0:
        vals[1:] = 0.0
    return LimitCorrelation(alpha=alpha, values=vals)


# ---------------------------------------------------------------------------
# spectral-shift measure tails

@dataclass(frozen=True)
class PiTail:
    """Mass of the normalized squared-kernel-shift measure beyond eps."""

    n: int
    eps: float
    mass: float


def _pl_shift_mass_beyond(delta, h, eps, cfg):
    """int_eps^inf (g(x-h) - g(x))^2 dx for the power-law kernel, exact
    piecewise (the same D(K) machinery as rbar)."""
    a = 2 * delta + 1.0
    pl = _PowerLawRbar(delta, cfg)
    total = 0.0
    # young end: x in (eps, h), only g(x) alive
    if eps < h:
        total += (min(h, 1.0) ** a - eps ** a) / a
    # interior: x in (max(eps,h), 1], both alive
    lo = max(eps, h)
    if lo < 1.0:
        w_lo = (lo - h) / h
        w_hi = (1.0 - h) / h
        total += h ** a * (pl._d(w_hi) - pl._d(w_lo))
    # echo: x in (max(eps,1), 1+h], only g(x-h) alive
    if eps < 1.0 + h:
        u_lo = max(eps, 1.0) - h
        total += (1.0 - u_lo ** a) / a
    return total


def pi_tail(spec, n, eps, cfg=None):
    """Tail mass pi^n((eps, inf)) of the probability measure with density
    (g(x - 1/n) - g(x))^2 / rbar(1/n).

    For kernels with a truncation jump the mass does not drain to 0: it
    collects at the jump location, which is exactly the regime where the
    central limit machinery fails.
    """
    cfg = cfg or _DEFAULT_CFG
    n = int(n)
    if n < 1:
        raise ValidationError("grid frequency must be >= 1")
    eps = float(eps)
    if eps <= 0:
        raise ValidationError("eps must be positive")
    h = 1.0 / n
    model = build_covariance(spec, cfg)
    denom = model.rbar(h)
    if denom <= 0:
        raise ValidationError("degenerate shift measure: rbar(1/n) = 0")

    if isinstance(spec, PowerLawKernel):
        if eps >= 1.0 + h:
            return PiTail(n=n, eps=eps, mass=0.0)
        num = _pl_shift_mass_beyond(spec.delta, h, eps, cfg)
    elif isinstance(spec, ExponentialKernel):
        lam = spec.rate
        if eps >= 1.0 + h:
            return PiTail(n=n, eps=eps, mass=0.0)
        num = 0.0
        if eps < h:  # young end: only g(x) alive
            num += (math.exp(-2 * lam * eps) - math.exp(-2 * lam * h)) / (2 * lam)
        lo = max(eps, h)
        if lo < 1.0:  # interior: both copies alive
            num += ((math.exp(lam * h) - 1.0) ** 2
                    * (math.exp(-2 * lam * lo) - math.exp(-2 * lam)) / (2 * lam))
        # echo of the truncation jump: x in (max(eps,1), 1+h]
        u_lo = max(eps, 1.0) - h
        num += (math.exp(-2 * lam * u_lo) - math.exp(-2 * lam)) / (2 * lam)
    elif isinstance(spec, TabulatedKernel):
        upper = float(spec.grid[-1]) + h
        if eps >= upper:
            return PiTail(n=n, eps=eps, mass=0.0)
        num = _tab_shift_mass(spec, h, eps, upper)
    else:
        g = spec.eval
        if isinstance(spec, GammaKernel):
            upper = spec.effective_support() + h
        else:
            upper = spec.support + h
        if eps >= upper:
            return PiTail(n=n, eps=eps, mass=0.0)
        pts = sorted({p for p in (h, 1.0, 1.0 + h, spec.support,
                                  spec.support + h)
                      if eps < p < upper})
        num = _quad(lambda x: (g(x - h) - g(x)) ** 2, eps, upper, cfg,
                    points=pts or None)
    mass = num / denom
    return PiTail(n=n, eps=eps, mass=min(1.0, max(0.0, mass)))


# ---------------------------------------------------------------------------
# asymptotic-regime conditions

@dataclass(frozen=True)
class ConditionReport:
    lln_ok: bool
    clt_ok: bool
    alpha: float | None
    p_min: float
    required_gamma: float | None
    delta_bounds: tuple | None
    inconclusive: bool = False
    alpha_se: float | None = None
    notes: tuple = ()


def _clt_power_region(p):
    """Admissible kernel-exponent interval and volatility-smoothness floor
    for the central limit theorem, as functions of the smallest power."""
    if p >= 1.0:
        return (-0.5, 0.0), 0.5
    if p > 0.5:
        return (-0.5, (p - 1.0) / (2.0 * p)), 1.0 / (2.0 * p)
    return None, None


def check_conditions(spec, powers, gamma_vol=1.0, cfg=None):
    """Which asymptotic results can be trusted for this kernel and these
    powers. Closed-form regions for the analytic families; a fitted slope
    with a standard error for tabulated kernels (flagged inconclusive when
    the fit is too noisy to decide)."""
    from .gaussmom import PowerVector

    if isinstance(powers, PowerVector):
        pvs = [powers]
    elif powers and isinstance(powers[0], (list, tuple, PowerVector)):
        pvs = [p if isinstance(p, PowerVector) else PowerVector(tuple(p))
               for p in powers]
    else:
        pvs = [PowerVector(tuple(powers))]
    gamma_vol = float(gamma_vol)
    if not 0.0 < gamma_vol <= 1.0:
        raise ValidationError(
            f"volatility smoothness index must lie in (0, 1], got {gamma_vol}")
    positive = [p for pv in pvs for p in pv.powers if p > 0]
    p_min = min(positive) if positive else 0.0
    notes = []
    inconclusive = False
    alpha_se = None

    if p_min == 0.0:
        return ConditionReport(
            lln_ok=True, clt_ok=False, alpha=None, p_min=0.0,
            required_gamma=None, delta_bounds=None,
            notes=("all powers are zero; the statistic is constant",))

    delta_bounds, required_gamma = _clt_power_region(p_min)
    if delta_bounds is None:
        notes.append("powers at or below 1/2 fall outside every admissible "
                     "region; no central limit theory applies")

    if isinstance(spec, PowerLawKernel):
        d = spec.delta
        if d > 0:
            alpha = 1.0
            lln_ok = False
            notes.append(
                "the kernel's truncation jump dominates the small-scale "
                "variance: the effective exponent is 1, not 2*delta+1, and "
                "the shift measure piles up at the jump instead of "
                "concentrating at zero, so the statistic estimates a "
                "lag-shifted volatility functional rather than the "
                "contemporaneous one")
            clt_ok = False
        else:
            lln_ok = True
            alpha = 2 * d + 1.0
            clt_ok = (delta_bounds is not None
                      and delta_bounds[0] < d < delta_bounds[1]
                      and gamma_vol > required_gamma)
            if delta_bounds is not None and gamma_vol <= required_gamma:
                notes.append(
                    f"volatility smoothness {gamma_vol} is at or below the "
                    f"required {required_gamma:g}")
    elif isinstance(spec, GammaKernel):
        d = spec.nu - 1.0
        if spec.nu >= 1.5:
            # report the formal exponent, not the covariance model's
            # clamp at 2: it says how far into the smooth regime we are
            alpha = 2 * spec.nu - 1.0
            lln_ok = False
            clt_ok = False
            notes.append("local exponent is outside (0, 2): shape >= 3/2 "
                         "makes the path differentiable; neighboring "
                         "increments correlate perfectly and no "
                         "increment-based limit theorem applies")
        else:
            alpha = 2 * spec.nu - 1.0
            lln_ok = True
            clt_ok = (delta_bounds is not None
                      and delta_bounds[0] < d < delta_bounds[1]
                      and gamma_vol > required_gamma)
            if 0.5 < spec.nu < 1.25:
                notes.append("centering by the limit correlations is a valid "
                             "substitute for the finite-n centering in this "
                             "shape range")
    elif isinstance(spec, ExponentialKernel):
        alpha = 1.0
        lln_ok = False
        clt_ok = False
        notes.append("the shift measure converges to two atoms, one at zero "
                     "and one at the truncation point, instead of "
                     "concentrating at zero; the scaled statistic converges "
                     "to a two-term mixture, so use the degenerate limit "
                     "instead of the standard one")
    elif isinstance(spec, TabulatedKernel):
        model = build_covariance(spec, cfg)
        fit = fit_alpha(model)
        alpha, alpha_se = fit.alpha, fit.se
        inconclusive = alpha_se > 0.05
        d = (alpha - 1.0) / 2.0
        lln_ok = (not inconclusive) and 0.0 < alpha < 2.0
        clt_ok = (not inconclusive and delta_bounds is not None
                  and delta_bounds[0] < d < delta_bounds[1]
                  and gamma_vol > required_gamma)
        if inconclusive:
            notes.append(f"fitted exponent {alpha:.3f} has standard error "
                         f"{alpha_se:.3f} > 0.05; cannot certify the regime")
    else:
        raise ValidationError(f"unknown kernel spec {type(spec).__name__}")

    return ConditionReport(
        lln_ok=lln_ok, clt_ok=clt_ok, alpha=alpha, p_min=p_min,
        required_gamma=required_gamma, delta_bounds=delta_bounds,
        inconclusive=inconclusive, alpha_se=alpha_se, notes=tuple(notes))


def gamma_kernel_small_t(nu, rate, t):
    """Leading term of 1 - r(t) for the gamma kernel as t -> 0; the shape
    decides among a power law, a squared-log regime, and a plain square."""
    nu, rate, t = float(nu), float(rate), float(t)
    if nu <= 0.5:
        raise ValidationError(f"shape must exceed 1/2, got {nu}")
    if t <= 0:
        raise ValidationError("t must be positive")
    x = rate * t
    if nu < 1.5:
        return (2.0 ** (1.0 - 2 * nu) * _gamma_fn(1.5 - nu)
                / _gamma_fn(nu + 0.5) * x ** (2 * nu - 1.0))
    if nu == 1.5:
        return 0.5 * x * x * abs(math.log(t))
    return x * x / (4.0 * (nu - 1.5))


@dataclass(frozen=True)
class AlphaFit:
    alpha: float
    se: float
    t_lo: float
    t_hi: float


def fit_alpha(model, t_lo=None, t_hi=None, n_pts=25):
    """Least-squares slope of log rbar against log t over [t_lo, t_hi]
    (two decades ending at 1e-2 by default), with the usual slope standard
    error.

    For tabulated kernels the window is pushed above the grid resolution:
    below it the interpolant is plain Lipschitz and every fitted slope
    would read 2 regardless of the tabulated shape.
    """
    if t_lo is None or t_hi is None:
        lo, hi = 1e-4, 1e-2
        if isinstance(model.kernel, TabulatedKernel):
            dx = float(np.max(np.diff(model.kernel.grid)))
            lo = max(lo, 4.0 * dx)
            hi = min(max(100.0 * lo, hi), model.kernel.support / 2.0)
            # a very coarse table leaves no room above its resolution; fit
            # what the interpolant actually does there
            lo = min(lo, hi / 10.0)
        t_lo = lo if t_lo is None else t_lo
        t_hi = hi if t_hi is None else t_hi
    if not 0.0 < t_lo < t_hi:
        raise ValidationError("fit window must satisfy 0 < t_lo < t_hi")
    ts = np.geomspace(t_lo, t_hi, n_pts)
    ys = np.array([model.rbar(t) for t in ts])
    if np.any(ys <= 0):
        raise ValidationError("rbar must be positive on the fit window")
    x, y = np.log(ts), np.log(ys)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = max(len(ts) - 2, 1)
    se = math.sqrt(float(resid @ resid) / dof / float(((x - x.mean()) ** 2).sum()))
    return AlphaFit(alpha=float(slope), se=se, t_lo=t_lo, t_hi=t_hi)
