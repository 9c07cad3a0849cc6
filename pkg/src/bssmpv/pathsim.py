"""Path synthesis: Gaussian core, volatility, and full moving-average paths.

Everything here draws from Philox4x64 counter-based streams with the key
laid out as (seed, replicate * 8 + channel); channel 0 carries the path
innovations, channel 1 the volatility driver, channel 2 the drift driver.
The layout is part of the public contract so that independent
reimplementations can reproduce the same joint laws (bit-for-bit equality
across FFT libraries is not promised, distributional equality is).

Two synthesis routes exist for the driftless path:

- an exact route through the stationary Gaussian core (circulant embedding
  of the increment autocovariance), available when the volatility is
  constant;
- a truncated moving-average route on a refined grid, for general
  volatility: left-edge volatility per innovation cell, kernel evaluated at
  cell midpoints, and the first cell carrying the root-mean-square kernel
  average so the increment variance is matched where the kernel is
  steepest.
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.fft import next_fast_len
from scipy.signal import fftconvolve, lfilter
from scipy.special import gammainc, gammaincc, gammainccinv

from .errors import (ConditionWarning, DataError, RobustnessWarning,
                     SimulationError, ValidationError)
from .kernels import (CovarianceModel, ExponentialKernel, GammaKernel,
                      KernelSpec, PowerLawKernel, TabulatedKernel,
                      build_covariance, check_conditions, kernel_from_config,
                      _cell_quadrature, _quad, _tab_knots, _DEFAULT_CFG)

__all__ = [
    "VolatilityModel", "ConstantVol", "DeterministicVol", "ExpFractionalVol",
    "sinusoid_vol", "linear_vol", "vol_from_config", "vol_to_config",
    "PathBundle", "simulate_gaussian_core", "simulate_volatility",
    "simulate_bss", "LipschitzDrift", "SmootherBssDrift", "add_drift",
    "FinitenessReport", "finiteness_diagnostic", "bundle_to_csv",
    "bundle_from_csv", "bundle_to_binary", "bundle_from_binary",
]

_CHANNEL_PATH = 0
_CHANNEL_VOL = 1
_CHANNEL_DRIFT = 2


def _rng(seed, replicate, channel):
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    if replicate < 0:
        raise ValidationError("replicate index must be >= 0")
    key = np.array([seed, replicate * 8 + channel], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# volatility models

class VolatilityModel:
    """Base for volatility families; paths are positive and cadlag."""

    family = "abstract"
    gamma_vol = 1.0

    def config_items(self):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantVol(VolatilityModel):
    level: float = 1.0

    family = "const"
    gamma_vol = 1.0

    def __post_init__(self):
        if not float(self.level) > 0:
            raise ValidationError(
                f"volatility level must be positive, got {self.level}")
        object.__setattr__(self, "level", float(self.level))

    def config_items(self):
        return {"family": self.family, "level": repr(self.level)}


@dataclass(frozen=True)
class DeterministicVol(VolatilityModel):
    """sigma(t) from a deterministic function.

    The function must be positive on the whole window it is evaluated on;
    full-path simulation extends that window into the past by the
    truncation depth, so it must be defined and positive at negative times
    there. gamma_vol declares the increment-smoothness exponent claimed for
    the function (1 for Lipschitz).
    """

    fn: object
    gamma_vol: float = 1.0
    label: str = "fn"
    params: dict = field(default_factory=dict)

    family = "fn"

    def __post_init__(self):
        if not callable(self.fn):
            raise ValidationError("deterministic volatility needs a callable")
        if not 0.0 < float(self.gamma_vol) <= 1.0:
            raise ValidationError("smoothness index must lie in (0, 1]")
        object.__setattr__(self, "gamma_vol", float(self.gamma_vol))

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        try:
            out = np.asarray(self.fn(t), dtype=float)
            if out.shape != t.shape:
                raise TypeError
        except (TypeError, ValueError):
            out = np.array([float(self.fn(x)) for x in t.ravel()])
            out = out.reshape(t.shape)
        return out

    def config_items(self):
        if self.label in ("sinusoid", "linear"):
            items = {"family": self.label}
            items.update({k: repr(v) for k, v in self.params.items()})
            return items
        raise ValidationError(
            "only the named deterministic families (sinusoid, linear) are "
            "serializable; wrap custom callables yourself")


@dataclass(frozen=True)
class ExpFractionalVol(VolatilityModel):
    """Lognormal volatility driven by fractional Brownian motion.

    sigma_t = exp(vol_of_vol * X_t - compensator) with X a fractional
    Brownian motion of Hurst index `hurst` anchored to 0 at the start of
    the simulation window; the compensator keeps E sigma_t = 1 at every
    grid point. mean_rev > 0 replaces X by the discrete mean-reverting
    filter X_i = exp(-mean_rev*h) X_{i-1} + dB_i (off by default).
    share_noise_stream=True builds dB by causally filtering the same
    innovations that drive the path, giving leverage-type dependence; the
    filtered increments are then approximately fractional rather than
    exactly so, but the compensator still matches their actual variance.
    """

    hurst: float
    vol_of_vol: float
    mean_rev: float = 0.0
    share_noise_stream: bool = False

    family = "expfrac"

    def __post_init__(self):
        h, v = float(self.hurst), float(self.vol_of_vol)
        if not 0.5 < h < 1.0:
            raise ValidationError(
                f"Hurst index must lie in (1/2, 1), got {self.hurst}")
        if v <= 0:
            raise ValidationError("vol_of_vol must be positive")
        if float(self.mean_rev) < 0:
            raise ValidationError("mean reversion rate must be >= 0")
        object.__setattr__(self, "hurst", h)
        object.__setattr__(self, "vol_of_vol", v)
        object.__setattr__(self, "mean_rev", float(self.mean_rev))

    @property
    def gamma_vol(self):
        return self.hurst

    def config_items(self):
        return {"family": self.family, "hurst": repr(self.hurst),
                "vol_of_vol": repr(self.vol_of_vol),
                "mean_rev": repr(self.mean_rev),
                "share_noise_stream": repr(self.share_noise_stream)}


def sinusoid_vol(base=1.0, amplitude=0.5, frequency=1.0):
    """sigma(t) = base + amplitude*sin(frequency*t)."""
    base, amplitude, frequency = map(float, (base, amplitude, frequency))
    if base - abs(amplitude) <= 0:
        raise ValidationError("sinusoid volatility must stay positive")
    return DeterministicVol(
        fn=lambda t: base + amplitude * np.sin(frequency * t),
        gamma_vol=1.0, label="sinusoid",
        params={"base": base, "amplitude": amplitude, "frequency": frequency})


def linear_vol(base=1.0, slope=0.0):
    """sigma(t) = base + slope*t (positive on the window actually used)."""
    base, slope = float(base), float(slope)
    return DeterministicVol(fn=lambda t: base + slope * t, gamma_vol=1.0,
                            label="linear",
                            params={"base": base, "slope": slope})


def vol_from_config(items):
    """Volatility model from a dict of options (family plus parameters)."""
    items = {k.lower(): v for k, v in items.items()}
    family = str(items.get("family", "")).lower()
    try:
        if family in ("const", "constant"):
            return ConstantVol(float(items.get("level", 1.0)))
        if family == "expfrac":
            share = str(items.get("share_noise_stream", "false")).lower()
            return ExpFractionalVol(
                hurst=float(items["hurst"]),
                vol_of_vol=float(items["vol_of_vol"]),
                mean_rev=float(items.get("mean_rev", 0.0)),
                share_noise_stream=share in ("true", "1", "yes"))
        if family == "sinusoid":
            return sinusoid_vol(float(items.get("base", 1.0)),
                                float(items.get("amplitude", 0.5)),
                                float(items.get("frequency", 1.0)))
        if family == "linear":
            return linear_vol(float(items.get("base", 1.0)),
                              float(items.get("slope", 0.0)))
    except KeyError as exc:
        raise ValidationError(f"volatility config missing {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad volatility parameter: {exc}") from exc
    raise ValidationError(f"unknown volatility family {family!r}")


def vol_to_config(vm):
    """Dict of options that vol_from_config maps back to the same model."""
    return vm.config_items()


def _vol_meta(vm):
    if isinstance(vm, DeterministicVol) and vm.label not in ("sinusoid",
                                                             "linear"):
        return {"family": "fn", "label": vm.label}
    return dict(vm.config_items())


# ---------------------------------------------------------------------------
# stationary Gaussian synthesis

def _increment_autocov(model, freq, m):
    """gamma(0..m): autocovariance of grid increments at spacing 1/freq."""
    h = 1.0 / freq
    rb = np.array([model.rbar(j * h) for j in range(m + 2)])
    gamma = np.empty(m + 1)
    gamma[0] = rb[1]
    j = np.arange(1, m + 1)
    gamma[1:] = 0.5 * (rb[j + 1] + rb[j - 1] - 2.0 * rb[j])
    return gamma


def _fgn_autocov(hurst, step, m):
    j = np.arange(m + 1, dtype=float)
    two_h = 2.0 * hurst
    return 0.5 * step ** two_h * ((j + 1) ** two_h - 2 * j ** two_h
                                  + np.abs(j - 1) ** two_h)


class _StationaryGaussian:
    """Draws stationary Gaussian sequences with a given autocovariance.

    Primary route: circulant embedding of gamma(0..m) on a ring of size 2m.
    Ring eigenvalues below -1e-8 of the peak mean the embedding failed and
    the dense route takes over (symmetric factorization of the Toeplitz
    matrix); tiny negatives are clipped. Each embedded sample consumes
    exactly ring-size standard normals in one call: entry 0 feeds the zero
    frequency, entry 1 the Nyquist frequency, the next m-1 the real parts
    and the last m-1 the imaginary parts of the positive frequencies. The
    dense route consumes one normal per output point.
    """

    def __init__(self, gamma, n_out):
        gamma = np.asarray(gamma, dtype=float)
        m = len(gamma) - 1
        if n_out > m:
            raise ValidationError("embedding shorter than the requested path")
        self.n_out = int(n_out)
        self.dense_factor = None
        self.ring_size = None
        ring = np.concatenate([gamma, gamma[-2:0:-1]])
        lam = np.fft.fft(ring).real
        peak = float(lam.max())
        if peak <= 0:
            raise SimulationError("increment covariance is not positive")
        if lam.min() < -1e-8 * peak:
            self._init_dense(gamma)
            return
        self.ring_size = len(ring)
        self.half = self.ring_size // 2
        self._amp = np.sqrt(np.clip(lam, 0.0, None) / self.ring_size)

    def _init_dense(self, gamma):
        from scipy.linalg import toeplitz
        cov = toeplitz(gamma[:self.n_out])
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < -1e-8 * max(float(vals.max()), 1e-300):
            raise SimulationError(
                "increment covariance is not positive semidefinite; the "
                "circulant embedding and the dense factorization both "
                "failed")
        self.dense_factor = vecs * np.sqrt(np.clip(vals, 0.0, None))

    @property
    def route(self):
        return "dense" if self.dense_factor is not None else "circulant"

    def sample(self, rng, count=1):
        """(count, n_out) array of increment paths from one stream."""
        if self.dense_factor is not None:
            z = rng.standard_normal((count, self.n_out))
            return z @ self.dense_factor.T
        L, half = self.ring_size, self.half
        nrm = rng.standard_normal((count, L))
        z = np.empty((count, L), dtype=complex)
        z[:, 0] = nrm[:, 0] * math.sqrt(2.0)
        z[:, half] = nrm[:, 1] * math.sqrt(2.0)
        z[:, 1:half] = nrm[:, 2:half + 1] + 1j * nrm[:, half + 1:]
        z[:, half + 1:] = np.conj(z[:, half - 1:0:-1])
        z *= self._amp
        x = np.fft.fft(z, axis=1).real / math.sqrt(2.0)
        return x[:, :self.n_out]


def _embedding_lags(n_out):
    # ring of 2m with m >= 2*n_out, padded up to an FFT-friendly size
    size = next_fast_len(4 * n_out, real=False)
    if size % 2:
        size += 1
    return size // 2


_MODEL_CACHE: dict = {}
_SYNTH_CACHE: dict = {}


def _spec_key(spec):
    return tuple(sorted(spec.config_items().items()))


def _cache_put(cache, key, value, cap=8):
    cache[key] = value
    while len(cache) > cap:
        cache.pop(next(iter(cache)))


def _cached_model(spec):
    key = _spec_key(spec)
    model = _MODEL_CACHE.get(key)
    if model is None:
        model = build_covariance(spec)
        _cache_put(_MODEL_CACHE, key, model)
    return model


def _core_synth(model, n, n_out):
    key = None
    if model.kernel is not None:
        key = (_spec_key(model.kernel), int(n), int(n_out))
        hit = _SYNTH_CACHE.get(key)
        if hit is not None:
            return hit
    m = _embedding_lags(n_out)
    synth = _StationaryGaussian(_increment_autocov(model, n, m), n_out)
    if key is not None:
        _cache_put(_SYNTH_CACHE, key, synth)
    return synth


@functools.lru_cache(maxsize=8)
def _fgn_synth(hurst, step, n_out):
    m = _embedding_lags(n_out)
    return _StationaryGaussian(_fgn_autocov(hurst, step, m), n_out)


# ---------------------------------------------------------------------------
# path bundles

@dataclass
class PathBundle:
    """Simulated paths on the grid i/n, i = 0..floor(n*horizon).

    Whatever was simulated is present; the rest is None. All arrays share
    the same length. The seed, together with the documented stream layout,
    fully determines every array.
    """

    n: int
    horizon: float
    seed: int
    g_path: np.ndarray | None = None
    sigma_path: np.ndarray | None = None
    y_path: np.ndarray | None = None
    drift_path: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def length(self):
        return int(math.floor(self.n * self.horizon)) + 1

    @property
    def times(self):
        return np.arange(self.length) / self.n

    def __post_init__(self):
        want = self.length
        for name in ("g_path", "sigma_path", "y_path", "drift_path"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (want,):
                    raise ValidationError(
                        f"{name} must have length {want}, got {arr.shape}")
                setattr(self, name, arr)


def _check_grid(n, horizon):
    n = int(n)
    if n < 1:
        raise ValidationError("grid frequency must be >= 1")
    horizon = float(horizon)
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    if math.floor(n * horizon) < 2:
        raise ValidationError("grid must contain at least two increments")
    return n, horizon


def simulate_gaussian_core(model, n, horizon, seed, replicate=0):
    """Stationary Gaussian core path with exact increment covariance.

    The increments of the output carry, in distribution, exactly the
    autocovariance implied by the model's increment variance function. The
    path starts at 0: every downstream statistic is an increment
    functional, so the level carries no information.
    """
    if not isinstance(model, CovarianceModel):
        raise ValidationError("simulate_gaussian_core expects a covariance "
                              "model; build one from the kernel first")
    n, horizon = _check_grid(n, horizon)
    n_out = int(math.floor(n * horizon))
    synth = _core_synth(model, n, n_out)
    inc = synth.sample(_rng(seed, replicate, _CHANNEL_PATH))[0]
    g = np.concatenate([[0.0], np.cumsum(inc)])
    kernel_id = (dict(model.kernel.config_items())
                 if model.kernel is not None
                 else {"family": "synthetic", "alpha": model.alpha})
    meta = {"kernel": kernel_id, "route": synth.route, "rng": "philox4x64",
            "replicate": int(replicate)}
    return PathBundle(n=n, horizon=horizon, seed=int(seed), g_path=g,
                      meta=meta)


# ---------------------------------------------------------------------------
# volatility synthesis

def _expfrac_sigma_edges(vm, step, count, rng=None, xi=None):
    """sigma at the count+1 edges of a grid with spacing `step`.

    The log driver is anchored to 0 at the first edge and compensated with
    its exact variance, so E sigma = 1 at every edge. Independent mode
    consumes one embedding-sized block of normals from `rng`; shared mode
    causally filters the supplied innovations instead, and edge j then
    depends on xi[:j] only, which is the adaptedness contract.
    """
    v, hurst, kappa = vm.vol_of_vol, vm.hurst, vm.mean_rev
    need_ac = kappa > 0
    if xi is not None:
        # moving-average fractional increments; the cumulative weights
        # telescope, which makes the anchored variance a plain prefix sum
        k = np.arange(count, dtype=float)
        w = np.empty(count)
        w[0] = 1.0
        if count > 1:
            w[1:] = (k[1:] + 1.0) ** (hurst - 0.5) - k[1:] ** (hurst - 0.5)
        norm = step ** hurst / math.sqrt(float(w @ w))
        db = norm * fftconvolve(xi, w)[:count]
        var_edge = np.concatenate(
            [[0.0],
             norm ** 2 * np.cumsum((k + 1.0) ** (2.0 * hurst - 1.0))])
        ac = None
        if need_ac:
            full = norm ** 2 * fftconvolve(w, w[::-1])
            ac = full[count - 1:]
    else:
        synth = _fgn_synth(hurst, step, count)
        db = synth.sample(rng)[0]
        var_edge = (np.arange(count + 1) * step) ** (2.0 * hurst)
        ac = _fgn_autocov(hurst, step, count) if need_ac else None

    if kappa > 0:
        phi = math.exp(-kappa * step)
        x = np.concatenate([[0.0], lfilter([1.0], [1.0, -phi], db)])
        # cov(X_{i-1}, dB_i) = sum_{d<i} phi^(d-1) ac[d], then the exact
        # variance recursion var_i = phi^2 var_{i-1} + 2 phi cross_i + ac[0]
        powers = phi ** np.arange(max(count - 1, 0))
        cross = np.concatenate([[0.0], np.cumsum(powers * ac[1:count])])
        drive = 2.0 * phi * cross + ac[0]
        var_x = np.concatenate(
            [[0.0], lfilter([1.0], [1.0, -phi * phi], drive)])
    else:
        x = np.concatenate([[0.0], np.cumsum(db)])
        var_x = var_edge
    return np.exp(v * x - 0.5 * v * v * var_x)


def _sigma_edges(vm, step, n_cells, first_edge_time, seed, replicate, xi,
                 channel=_CHANNEL_VOL):
    """Volatility at the n_cells+1 cell edges; edge j sits at
    first_edge_time + j*step. Convolutions use edges[:-1], the adapted
    left-edge values; the final edge only ever ends up in coarse output."""
    if isinstance(vm, ConstantVol):
        return np.full(n_cells + 1, vm.level)
    if isinstance(vm, DeterministicVol):
        edges = first_edge_time + np.arange(n_cells + 1) * step
        sig = vm.evaluate(edges)
        if not np.all(sig > 0):
            raise ValidationError(
                "volatility must be positive on the whole simulation "
                "window, including the truncated past")
        return sig
    if isinstance(vm, ExpFractionalVol):
        if vm.share_noise_stream and xi is not None:
            return _expfrac_sigma_edges(vm, step, n_cells, xi=xi)
        rng = _rng(seed, replicate, channel)
        return _expfrac_sigma_edges(vm, step, n_cells, rng=rng)
    raise ValidationError(f"unknown volatility model {type(vm).__name__}")


def simulate_volatility(vm, n, horizon, seed, replicate=0):
    """Volatility path on the grid i/n over [0, horizon]."""
    n, horizon = _check_grid(n, horizon)
    count = int(math.floor(n * horizon))
    sigma = _sigma_edges(vm, 1.0 / n, count, 0.0, seed, replicate, xi=None)
    meta = {"vol": _vol_meta(vm), "rng": "philox4x64",
            "replicate": int(replicate)}
    return PathBundle(n=n, horizon=horizon, seed=int(seed), sigma_path=sigma,
                      meta=meta)


# ---------------------------------------------------------------------------
# full paths

def _young_weight(spec, h):
    """Root-mean-square kernel value over the first cell (0, h)."""
    if isinstance(spec, PowerLawKernel):
        a = 2.0 * spec.delta + 1.0
        mass = min(h, 1.0) ** a / a
    elif isinstance(spec, ExponentialKernel):
        lam = spec.rate
        mass = (1.0 - math.exp(-2.0 * lam * min(h, 1.0))) / (2.0 * lam)
    elif isinstance(spec, GammaKernel):
        nu, lam = spec.nu, spec.rate
        mass = (gammainc(2.0 * nu - 1.0, 2.0 * lam * h)
                * math.gamma(2.0 * nu - 1.0)
                / (2.0 * lam) ** (2.0 * nu - 1.0))
    elif isinstance(spec, TabulatedKernel):
        mass = _cell_quadrature(lambda x: spec.eval(x) ** 2,
                                _tab_knots(spec, 0.0, h))
    else:
        mass = _quad(lambda x: spec.eval(x) ** 2, 0.0, h, _DEFAULT_CFG)
    return math.sqrt(max(mass, 0.0) / h)


def _l1_weight(spec, h):
    """Plain average of the kernel over the first cell (0, h): the right
    first-cell weight for ds integrals, where nothing gets squared."""
    if isinstance(spec, PowerLawKernel):
        a = spec.delta + 1.0
        return min(h, 1.0) ** a / a / h
    if isinstance(spec, ExponentialKernel):
        lam = spec.rate
        return (1.0 - math.exp(-lam * min(h, 1.0))) / lam / h
    if isinstance(spec, GammaKernel):
        nu, lam = spec.nu, spec.rate
        return gammainc(nu, lam * h) * math.gamma(nu) / lam ** nu / h
    if isinstance(spec, TabulatedKernel):
        return _cell_quadrature(spec.eval, _tab_knots(spec, 0.0, h)) / h
    return _quad(spec.eval, 0.0, h, _DEFAULT_CFG) / h


def _raw_weights(spec, h, depth_cells):
    """Kernel weight per innovation cell: midpoint values, except the first
    cell, which carries the RMS average (exact first-cell variance)."""
    w = np.empty(depth_cells)
    w[0] = _young_weight(spec, h)
    if depth_cells > 1:
        w[1:] = spec.eval((np.arange(1, depth_cells) + 0.5) * h)
    return w


def _increment_variance(w, subgrid, h):
    """Exact variance of a coarse increment of the discrete moving average
    with weights w: h * sum over cells of the lag-s weight difference."""
    pad = np.zeros(subgrid)
    v = np.concatenate([w, pad]) - np.concatenate([pad, w])
    return h * float(v @ v)


_WEIGHTS_CACHE: dict = {}


def _convolution_weights(spec, model, h, depth_cells, subgrid):
    """Moment-matched cell weights: midpoint/RMS base, then the first-cell
    weight rescaled so the coarse-increment variance matches the model's
    exact value. Cell-constant weights cannot reproduce both the kernel
    energy and the shifted cross-energy near a singularity; matching the
    increment variance (the normalizer of every estimator) is the variant
    the accuracy contract pins down, and the correction also absorbs the
    tiny truncation-tail deficit. Returns (weights, correction_factor)."""
    key = (_spec_key(spec), float(h), int(depth_cells), int(subgrid))
    hit = _WEIGHTS_CACHE.get(key)
    if hit is not None:
        return hit
    w = _raw_weights(spec, h, depth_cells)
    target = model.rbar(subgrid * h)
    base = _increment_variance(w, subgrid, h)
    w0 = w[0]
    ws = w[subgrid] if subgrid < depth_cells else 0.0
    # with w[0] -> c*w[0], the variance changes by
    # h*(2*w0^2*(c^2-1) - 2*w0*ws*(c-1)); solve for the exact target
    c = 1.0
    if w0 > 0 and base > 0:
        aa = 2.0 * w0 * w0
        bb = 4.0 * w0 * w0 - 2.0 * w0 * ws
        disc = bb * bb + 4.0 * aa * (target - base) / h
        if disc >= 0.0:
            u = (-bb + math.sqrt(disc)) / (2.0 * aa)
            if abs(u) < 0.5:
                c = 1.0 + u
    if c == 1.0 and abs(base - target) > 0.01 * target:
        warnings.warn(
            "the refinement grid is too coarse to match the increment "
            "variance near the kernel singularity; increase subgrid",
            UserWarning, stacklevel=3)
    w[0] = c * w0
    _cache_put(_WEIGHTS_CACHE, key, (w, c), cap=4)
    return w, c


def _default_depth(spec):
    if math.isfinite(spec.support):
        return float(spec.support)
    if isinstance(spec, GammaKernel):
        # smallest depth whose relative tail energy is below 1e-8
        return float(gammainccinv(2.0 * spec.nu - 1.0, 1e-8)
                     / (2.0 * spec.rate))
    raise ValidationError("kernel has unbounded support and no usable "
                          "truncation depth; pass one explicitly")


def _tail_energy_ratio(spec, depth):
    """Kernel energy beyond the truncation depth, relative to the total."""
    if isinstance(spec, PowerLawKernel):
        if depth >= 1.0:
            return 0.0
        return 1.0 - depth ** (2.0 * spec.delta + 1.0)
    if isinstance(spec, ExponentialKernel):
        if depth >= 1.0:
            return 0.0
        lam = spec.rate
        return ((math.exp(-2.0 * lam * depth) - math.exp(-2.0 * lam))
                / (1.0 - math.exp(-2.0 * lam)))
    if isinstance(spec, GammaKernel):
        return float(gammaincc(2.0 * spec.nu - 1.0, 2.0 * spec.rate * depth))
    if isinstance(spec, TabulatedKernel):
        upper = float(spec.grid[-1])
        if depth >= upper:
            return 0.0

        def fsq(x):
            return spec.eval(x) ** 2

        total = _cell_quadrature(fsq, _tab_knots(spec, 0.0, upper))
        tail = _cell_quadrature(fsq, _tab_knots(spec, depth, upper))
        return tail / total if total > 0 else 0.0
    if depth >= spec.support:
        return 0.0
    total = _quad(lambda x: spec.eval(x) ** 2, 0.0, spec.support,
                  _DEFAULT_CFG)
    tail = _quad(lambda x: spec.eval(x) ** 2, depth, spec.support,
                 _DEFAULT_CFG)
    return tail / total if total > 0 else 0.0


def simulate_bss(spec, vm, n, horizon, seed, truncation_depth=None,
                 subgrid=16, route="auto", replicate=0):
    """Full driftless path: moving average of volatility-scaled noise.

    route="auto" picks the exact Gaussian-core synthesis when the
    volatility is constant and the truncated moving average otherwise;
    "exact" and "convolution" force a route. The moving average runs on a
    grid refined by `subgrid` sub-steps per increment, over a past window
    of `truncation_depth` time units (default: the kernel support, or for
    unbounded kernels the depth keeping the discarded energy below 1e-8 of
    the total). A configuration outside the standard asymptotic regime
    still simulates fine; it just carries a ConditionWarning.
    """
    if not isinstance(spec, KernelSpec):
        raise ValidationError("simulate_bss expects a kernel spec")
    if not isinstance(vm, VolatilityModel):
        raise ValidationError("simulate_bss expects a volatility model")
    n, horizon = _check_grid(n, horizon)
    if route not in ("auto", "exact", "convolution"):
        raise ValidationError(f"unknown route {route!r}")
    subgrid = int(subgrid)
    if subgrid < 1:
        raise ValidationError("subgrid factor must be >= 1")
    if truncation_depth is None:
        depth = max(_default_depth(spec), 1.0)
    else:
        depth = float(truncation_depth)
        if depth < 1.0:
            raise ValidationError("truncation depth must be >= 1")

    report = check_conditions(spec, (2.0,), gamma_vol=vm.gamma_vol)
    if not report.lln_ok:
        warnings.warn(
            "this kernel/volatility configuration sits outside the standard "
            "asymptotic regime: " + "; ".join(report.notes),
            ConditionWarning, stacklevel=2)

    if route == "auto":
        route = "exact" if isinstance(vm, ConstantVol) else "convolution"
    if route == "exact" and not isinstance(vm, ConstantVol):
        raise ValidationError(
            "the exact route is only available for constant volatility")

    n_pts = int(math.floor(n * horizon)) + 1
    meta = {"kernel": dict(spec.config_items()), "vol": _vol_meta(vm),
            "route": route, "rng": "philox4x64", "replicate": int(replicate)}

    if route == "exact":
        model = _cached_model(spec)
        core = simulate_gaussian_core(model, n, horizon, seed,
                                      replicate=replicate)
        meta["core_route"] = core.meta["route"]
        meta["tail_energy_ratio"] = 0.0
        meta["truncation_warning"] = False
        return PathBundle(n=n, horizon=horizon, seed=int(seed),
                          g_path=core.g_path,
                          sigma_path=np.full(n_pts, vm.level),
                          y_path=vm.level * core.g_path, meta=meta)

    h = 1.0 / (n * subgrid)
    k_cells = int(math.ceil(depth * n * subgrid))
    n_inc = n_pts - 1
    total_cells = k_cells + n_inc * subgrid
    tail_ratio = _tail_energy_ratio(spec, k_cells * h)
    meta.update({"truncation_depth": depth, "subgrid": subgrid,
                 "tail_energy_ratio": float(tail_ratio),
                 "truncation_warning": bool(tail_ratio > 1e-6)})

    xi = _rng(seed, replicate, _CHANNEL_PATH).standard_normal(total_cells)
    edges = _sigma_edges(vm, h, total_cells, -k_cells * h, seed, replicate,
                         xi)
    w, correction = _convolution_weights(spec, _cached_model(spec), h,
                                         k_cells, subgrid)
    meta["first_cell_correction"] = correction
    x = edges[:-1] * xi * math.sqrt(h)
    conv = fftconvolve(x, w)
    y = conv[k_cells - 1: k_cells - 1 + n_inc * subgrid + 1: subgrid].copy()
    sigma = edges[k_cells::subgrid].copy()
    return PathBundle(n=n, horizon=horizon, seed=int(seed),
                      sigma_path=sigma, y_path=y, meta=meta)


# ---------------------------------------------------------------------------
# drift

@dataclass(frozen=True)
class LipschitzDrift:
    """Absolutely continuous drift: Z(t) = integral of `rate` over [0, t].

    `rate` is a constant or a bounded callable of time; either way the
    drift's increment-smoothness exponent is 1, which never disturbs the
    estimator limits (the path increments always scale more slowly).
    """

    rate: object = 1.0

    slope_exponent = 1.0

    def rate_fn(self, t):
        t = np.atleast_1d(t)
        if callable(self.rate):
            return np.array([float(self.rate(x)) for x in t])
        return np.full(len(t), float(self.rate))


@dataclass(frozen=True)
class SmootherBssDrift:
    """Drift as a kernel-smoothed process: Z(t) = int q(t-s) a_s ds.

    `process` is a volatility model reused as the integrand a; a stochastic
    integrand draws from the dedicated drift channel. The increment
    smoothness exponent is min((alpha_q + 1)/2, 1) with alpha_q the drift
    kernel's variance exponent: one order smoother than the matching noise
    integral, because ds replaces the Gaussian measure.
    """

    kernel: KernelSpec
    process: VolatilityModel
    subgrid: int = 16
    truncation_depth: float | None = None

    def __post_init__(self):
        if not isinstance(self.kernel, KernelSpec):
            raise ValidationError("drift kernel must be a kernel spec")
        if not isinstance(self.process, VolatilityModel):
            raise ValidationError("drift integrand must be a volatility "
                                  "model")


def add_drift(bundle, drift):
    """New bundle with the drift added to y_path and recorded separately.

    None is the identity. The drift's increment-smoothness exponent is
    checked against half the kernel's variance exponent (read back from the
    bundle metadata); a drift rough enough to disturb the estimator limits
    triggers a RobustnessWarning, never an error. The drift path is pinned
    to start at 0 like every other path in the bundle.
    """
    if drift is None:
        return bundle
    if bundle.y_path is None:
        raise ValidationError("bundle has no y_path to add drift to")
    if isinstance(drift, LipschitzDrift):
        times = bundle.times
        rates = drift.rate_fn(times)
        z = np.concatenate([[0.0], np.cumsum(
            0.5 * (rates[1:] + rates[:-1]) * np.diff(times))])
        slope = drift.slope_exponent
        drift_meta = {"kind": "lipschitz"}
    elif isinstance(drift, SmootherBssDrift):
        z = _smoother_drift_path(bundle, drift)
        alpha_q = _cached_model(drift.kernel).alpha
        slope = 1.0 if alpha_q is None else min(0.5 * (alpha_q + 1.0), 1.0)
        drift_meta = {"kind": "smoother_bss",
                      "kernel": dict(drift.kernel.config_items())}
    else:
        raise ValidationError(f"unknown drift {type(drift).__name__}")

    alpha = _bundle_alpha(bundle)
    if alpha is not None and slope <= 0.5 * alpha + 1e-9:
        warnings.warn(
            f"drift increments scale like t^{slope:.3g}, which is not "
            f"smoother than the path's t^{0.5 * alpha:.3g}; estimator "
            f"limits may shift", RobustnessWarning, stacklevel=2)
    meta = dict(bundle.meta)
    meta["drift"] = drift_meta
    return replace(bundle, y_path=bundle.y_path + z, drift_path=z, meta=meta)


def _bundle_alpha(bundle):
    cfg = bundle.meta.get("kernel")
    if not cfg:
        return None
    if cfg.get("family") == "synthetic":
        return cfg.get("alpha")
    return _cached_model(kernel_from_config(cfg)).alpha


def _smoother_drift_path(bundle, drift):
    q = drift.kernel
    n, subgrid = bundle.n, int(drift.subgrid)
    depth = (_default_depth(q) if drift.truncation_depth is None
             else float(drift.truncation_depth))
    h = 1.0 / (n * subgrid)
    k_cells = int(math.ceil(depth * n * subgrid))
    n_inc = bundle.length - 1
    total_cells = k_cells + n_inc * subgrid
    replicate = int(bundle.meta.get("replicate", 0))
    edges = _sigma_edges(drift.process, h, total_cells, -k_cells * h,
                         bundle.seed, replicate, xi=None,
                         channel=_CHANNEL_DRIFT)
    w = np.empty(k_cells)
    w[0] = _l1_weight(q, h)
    if k_cells > 1:
        w[1:] = q.eval((np.arange(1, k_cells) + 0.5) * h)
    conv = fftconvolve(edges[:-1] * h, w)
    z = conv[k_cells - 1: k_cells - 1 + n_inc * subgrid + 1: subgrid]
    return np.array(z) - z[0]


# ---------------------------------------------------------------------------
# finiteness diagnostic

@dataclass(frozen=True)
class FinitenessReport:
    finite: bool
    derivative_tail_energy: float
    note: str


def finiteness_diagnostic(spec, vm):
    """Checks that the far past contributes finite variance to the path.

    The criterion is the squared tail energy of the kernel derivative
    beyond time 1, weighted by the volatility's second moment; the built-in
    volatility families all have every moment, so the kernel term decides.
    """
    if not isinstance(vm, VolatilityModel):
        raise ValidationError("finiteness_diagnostic expects a volatility "
                              "model")
    if isinstance(spec, (PowerLawKernel, ExponentialKernel)):
        return FinitenessReport(True, 0.0,
                                "kernel vanishes beyond its support")
    if isinstance(spec, TabulatedKernel):
        grid, vals = spec.grid, spec.values
        slopes = np.diff(vals) / np.diff(grid)
        lo = np.maximum(grid[:-1], 1.0)
        hi = np.maximum(grid[1:], 1.0)
        energy = float(np.sum(slopes ** 2 * (hi - lo)))
        return FinitenessReport(True, energy,
                                "piecewise-linear derivative is bounded")
    if isinstance(spec, GammaKernel):
        nu, lam = spec.nu, spec.rate

        def dsq(t):
            return (np.exp(-lam * t) * t ** (nu - 2.0)
                    * ((nu - 1.0) - lam * t)) ** 2

        upper = max(spec.effective_support(), 2.0)
        energy = float(_quad(dsq, 1.0, upper, _DEFAULT_CFG))
        return FinitenessReport(
            True, energy,
            "exponentially decaying derivative; finite against any "
            "volatility with a second moment")
    raise ValidationError(f"unknown kernel spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# serialization

_CSV_COLUMNS = ("t", "G", "sigma", "Y", "drift")
_FIELD_BY_COLUMN = {"G": "g_path", "sigma": "sigma_path", "Y": "y_path",
                    "drift": "drift_path"}


def bundle_to_csv(bundle, path):
    """Writes t, G, sigma, Y, drift; absent series are written as nan."""
    cols = [bundle.times]
    for name in _CSV_COLUMNS[1:]:
        arr = getattr(bundle, _FIELD_BY_COLUMN[name])
        cols.append(arr if arr is not None
                    else np.full(bundle.length, np.nan))
    np.savetxt(path, np.column_stack(cols), delimiter=",",
               header=",".join(_CSV_COLUMNS), comments="", fmt="%.17g")


def bundle_from_csv(path):
    """Bundle from a CSV written by bundle_to_csv; all-nan columns are
    treated as absent. The seed is not recoverable from a CSV."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read bundle CSV {path}: {exc}") from exc
    if data.shape[1] != len(_CSV_COLUMNS):
        raise DataError(f"bundle CSV must have {len(_CSV_COLUMNS)} columns")
    t = data[:, 0]
    if len(t) < 2:
        raise DataError("bundle CSV needs at least two rows")
    step = t[1] - t[0]
    if step <= 0 or not np.allclose(np.diff(t), step, rtol=1e-9, atol=1e-12):
        raise DataError("bundle CSV time column must be a regular grid")
    n = int(round(1.0 / step))
    fields = {}
    for j, name in enumerate(_CSV_COLUMNS[1:], start=1):
        col = data[:, j]
        if not np.all(np.isnan(col)):
            fields[_FIELD_BY_COLUMN[name]] = col
    return PathBundle(n=n, horizon=t[-1] + 0.5 / n, seed=0,
                      meta={"source": "csv"}, **fields)


_BINARY_MAGIC = b"BSSPATH1"


def bundle_to_binary(bundle, path):
    """Compact binary form: magic, length-prefixed meta JSON, then the
    present arrays as little-endian float64 in the order listed in the
    header's "columns" entry. The JSON is canonical (sorted keys), so equal
    bundles produce byte-identical files."""
    present = [c for c in _CSV_COLUMNS[1:]
               if getattr(bundle, _FIELD_BY_COLUMN[c]) is not None]
    head = {"n": bundle.n, "horizon": bundle.horizon, "seed": bundle.seed,
            "length": bundle.length, "columns": present, "meta": bundle.meta}
    blob = json.dumps(head, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_BINARY_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for c in present:
            arr = getattr(bundle, _FIELD_BY_COLUMN[c])
            fh.write(np.asarray(arr, dtype="<f8").tobytes())


def bundle_from_binary(path):
    try:
        with open(path, "rb") as fh:
            if fh.read(len(_BINARY_MAGIC)) != _BINARY_MAGIC:
                raise DataError(f"{path} is not a path-bundle file")
            size = int.from_bytes(fh.read(8), "little")
            head = json.loads(fh.read(size).decode("utf-8"))
            length = int(head["length"])
            fields = {}
            for c in head["columns"]:
                raw = fh.read(8 * length)
                if len(raw) != 8 * length:
                    raise DataError(f"{path} is truncated")
                fields[_FIELD_BY_COLUMN[c]] = np.frombuffer(
                    raw, dtype="<f8").astype(float)
    except OSError as exc:
        raise DataError(f"cannot read bundle {path}: {exc}") from exc
    except (KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed bundle header in {path}: {exc}") from exc
    return PathBundle(n=int(head["n"]), horizon=float(head["horizon"]),
                      seed=int(head["seed"]), meta=head.get("meta", {}),
                      **fields)
