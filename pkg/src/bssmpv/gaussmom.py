"""Absolute moments of correlated standard Gaussian vectors.

Everything here is about quantities of the form E[|X_1|^{p_1} ... |X_k|^{p_k}]
for a zero-mean Gaussian vector with unit variances and a given correlation
matrix. Small cases have closed forms (mu_p, psi, nabeya_h); the general case
is handled by tensorized Gauss-Hermite quadrature or scrambled-Sobol Monte
Carlo. These moments are the centering constants of the normalized multipower
statistics and the building blocks of their asymptotic covariances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import hermite_e
from scipy import stats
from scipy.special import gamma as _gamma, ndtri

from .errors import DegenerateCovarianceError, ValidationError

_SQRT_2PI = math.sqrt(2.0 * math.pi)

# Eigenvalues of a correlation matrix below this are treated as exact zeros
# when factorizing for quadrature/MC; lagged fGn blocks get close to singular
# for alpha near 2.
_EIG_CLIP = 1e-12
_PSD_TOL = -1e-10


def mu_p(p):
    """E|u|^p for u ~ N(0,1): 2^{p/2} Gamma((p+1)/2) / Gamma(1/2).

    Defined for every p > -1; the package only ever needs p >= 0 but the
    analytic continuation below 0 is used by the series-tail coefficients.
    """
    p = float(p)
    if p <= -1.0:
        raise ValidationError(f"absolute moment diverges for p={p} <= -1")
    return 2.0 ** (p / 2.0) * _gamma((p + 1.0) / 2.0) / _gamma(0.5)


def psi(rho):
    """sqrt(1-rho^2) + rho*arcsin(rho) = (pi/2) E|UV|, corr(U,V)=rho."""
    rho = float(rho)
    if abs(rho) > 1.0 + 1e-12:
        raise ValidationError(f"correlation out of range: {rho}")
    rho = min(1.0, max(-1.0, rho))
    return math.sqrt(1.0 - rho * rho) + rho * math.asin(rho)


def nabeya_h(rho12, rho13, rho23):
    """E[|X_1^2 X_2 X_3|] for standard Gaussians with the given correlations.

    Closed form: (2/pi) (sqrt(1-rho23^2)(1 + rho12^2 + rho13^2)
                         + (rho23 + 2 rho12 rho13) arcsin(rho23)).
    The 3x3 correlation matrix must be positive semidefinite (boundary
    allowed: duplicated coordinates are fine).
    """
    r12, r13, r23 = float(rho12), float(rho13), float(rho23)
    c = np.array([[1.0, r12, r13], [r12, 1.0, r23], [r13, r23, 1.0]])
    if np.linalg.eigvalsh(c)[0] < _PSD_TOL:
        raise ValidationError(
            f"({rho12}, {rho13}, {rho23}) is not a valid correlation triple")
    r23 = min(1.0, max(-1.0, r23))
    return (2.0 / math.pi) * (
        math.sqrt(1.0 - r23 * r23) * (1.0 + r12 * r12 + r13 * r13)
        + (r23 + 2.0 * r12 * r13) * math.asin(r23))


@dataclass(frozen=True)
class PowerVector:
    """Exponents (p_1, ..., p_k) applied to k consecutive increments."""

    powers: tuple

    def __post_init__(self):
        pw = tuple(float(p) for p in self.powers)
        if len(pw) < 1:
            raise ValidationError("power vector must have at least one entry")
        if any(p < 0 for p in pw):
            raise ValidationError(f"negative powers not allowed: {pw}")
        object.__setattr__(self, "powers", pw)

    @property
    def k(self):
        return len(self.powers)

    @property
    def p_plus(self):
        return float(sum(self.powers))

    @property
    def p_min(self):
        """Smallest strictly positive exponent (0.0 if all are zero)."""
        pos = [p for p in self.powers if p > 0]
        return min(pos) if pos else 0.0

    @classmethod
    def parse(cls, text):
        """Parse '1,1' or '2' or '2,0' into a PowerVector."""
        try:
            return cls(tuple(float(tok) for tok in str(text).split(",")))
        except ValueError as exc:
            raise ValidationError(f"cannot parse power vector {text!r}") from exc

    def __str__(self):
        return ",".join(f"{p:g}" for p in self.powers)


@dataclass(frozen=True)
class GaussianBlockCov:
    """Correlation matrix of a Gaussian block (unit diagonal, PSD)."""

    entries: np.ndarray
    nondegenerate: bool = field(init=False)

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.ndim == 0:
            m = m.reshape(1, 1)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("covariance block must be a square matrix")
        if not np.allclose(m, m.T, atol=1e-12):
            raise ValidationError("covariance block must be symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-10):
            raise ValidationError("covariance block must have unit diagonal")
        eig = np.linalg.eigvalsh(m)
        if eig[0] < _PSD_TOL:
            raise ValidationError(
                f"covariance block is not PSD (min eigenvalue {eig[0]:.3e})")
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "nondegenerate", bool(eig[0] > 1e-10))

    @property
    def dim(self):
        return self.entries.shape[0]


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    error: float
    method: str

    def __float__(self):
        return self.value


# ---------------------------------------------------------------------------
# numerical backends

def _factor_eigh(corr):
    """corr = F F^T via eigendecomposition, clipping tiny negatives.

    For a single moment this is the better factor: it spreads the integrand
    kinks obliquely across the grid instead of aligning them with an axis.
    """
    w, v = np.linalg.eigh(corr)
    w = np.where(w < _EIG_CLIP, 0.0, w)
    return v * np.sqrt(w)[None, :]


def _factor_chol(corr):
    """corr = F F^T via Cholesky (eigh fallback if semidefinite).

    For covariance differences the triangular structure is the point: the
    factors of two nearby matrices are themselves nearby, so the integrand
    kinks sit in nearly the same places and the integration error cancels
    when one grid sum is subtracted from the other.
    """
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        return _factor_eigh(corr)


def _gh_nodes(order):
    # probabilists' Hermite: integrates against exp(-x^2/2); normalize to
    # the N(0,1) density
    x, w = hermite_e.hermegauss(order)
    return x, w / _SQRT_2PI


def _gh_value(powers, factor, order):
    """Tensor Gauss-Hermite value of E prod |(F z)_j|^{p_j}."""
    x, w = _gh_nodes(order)
    k = factor.shape[0]
    if k == 1:
        vals = np.abs(factor[0, 0] * x) ** powers[0]
        return float(w @ vals)
    # iterate over the first axis to keep memory flat for k=4, order=160
    rest = np.meshgrid(*((x,) * (k - 1)), indexing="ij")
    z_rest = np.stack([r.ravel() for r in rest])
    w_rest = np.ones(z_rest.shape[1])
    for wg in np.meshgrid(*((w,) * (k - 1)), indexing="ij"):
        w_rest *= wg.ravel()
    base = factor[:, 1:] @ z_rest
    col0 = factor[:, 0]
    total = 0.0
    for z0, w0 in zip(x, w):
        prod = np.ones(base.shape[1])
        for j in range(k):
            xs = base[j]
            if col0[j] != 0.0:
                xs = xs + col0[j] * z0
            prod = prod * np.abs(xs) ** powers[j]
        total += w0 * float(w_rest @ prod)
    return total


def _all_even(powers):
    return all(p == int(p) and int(p) % 2 == 0 for p in powers)


def _gh_estimate(powers, corr, start_order=40, max_order=160):
    """Gauss-Hermite ladder: double the order until stable, report the
    last successive difference as the error estimate.

    All-even powers make the integrand polynomial, so a single modest order
    is exact; non-even powers have kinks and converge like a power of
    1/order, which the ladder difference tracks (roughly: the reported gap
    is of the same size as the remaining error).
    """
    factor = _factor_eigh(corr)
    if _all_even(powers):
        order = max(24, int(sum(powers)) // 2 + 2)
        return MomentEstimate(_gh_value(powers, factor, order), 0.0,
                              f"quadrature(gh{order})")
    order = start_order
    val = _gh_value(powers, factor, order)
    err = np.inf
    while order * 2 <= max_order:
        order *= 2
        cur = _gh_value(powers, factor, order)
        err = abs(cur - val)
        val = cur
        if err <= 1e-9 * max(1.0, abs(val)):
            break
    return MomentEstimate(val, err, f"quadrature(gh{order})")


def _gh_cov_reduced(p_even, odd_powers, corr_oo, c_cross, start_order=40,
                    max_order=160):
    """Covariance of X^{p_even} with a product of |Y_j|^{p_j}, the even
    coordinate integrated out analytically.

    With X = c.Y + sqrt(v) Z conditionally on Y, E[X^p | Y] is a polynomial
    in c.Y, so cov(X^p, prod|Y_j|^{p_j}) = E[(E[X^p|Y] - E X^p) prod|Y_j|^{p_j}]
    is a low-dimensional integral whose weight vanishes in the mean. The
    quadrature error of the kinked factor multiplies that small weight,
    which is what makes this route sharp where the raw joint moment is not.
    """
    m = int(p_even) // 2
    coef = np.linalg.solve(corr_oo, c_cross)
    v = 1.0 - float(c_cross @ coef)
    factor = _factor_eigh(corr_oo)

    def value(order):
        x, w = _gh_nodes(order)
        grids = np.meshgrid(*((x,) * len(odd_powers)), indexing="ij")
        z = np.stack([g.ravel() for g in grids])
        wt = np.ones(z.shape[1])
        for wg in np.meshgrid(*((w,) * len(odd_powers)), indexing="ij"):
            wt *= wg.ravel()
        y = factor @ z
        cm = np.zeros(y.shape[1])
        cy = coef @ y
        for j in range(m + 1):
            cm += (math.comb(2 * m, 2 * j) * cy ** (2 * (m - j))
                   * v ** j * mu_p(2 * j))
        cm -= mu_p(2 * m)  # unconditional moment of the even coordinate
        prod = cm
        for j, p in enumerate(odd_powers):
            prod = prod * np.abs(y[j]) ** p
        return float(wt @ prod)

    order = start_order
    val = value(order)
    err = np.inf
    while order * 2 <= max_order:
        order *= 2
        cur = value(order)
        err = abs(cur - val)
        val = cur
        if err <= 1e-10 * max(1.0, abs(val)):
            break
    return MomentEstimate(val, err, f"quadrature(gh{order},reduced)")


def _gh_cov_estimate(powers, corr_full, corr_bd, start_order=40,
                     max_order=80):
    """Covariance by subtracting the block-independent moment, both sides
    evaluated on the same grid with matching Cholesky factors so the kink
    integration error cancels in the difference."""
    f_full = _factor_chol(corr_full)
    f_bd = _factor_chol(corr_bd)
    order = start_order

    def diff(q):
        return _gh_value(powers, f_full, q) - _gh_value(powers, f_bd, q)

    if _all_even(powers):
        order = max(24, int(sum(powers)) // 2 + 2)
        return MomentEstimate(diff(order), 0.0, f"quadrature(gh{order})")
    val = diff(order)
    err = np.inf
    while order * 2 <= max_order:
        order *= 2
        cur = diff(order)
        err = abs(cur - val)
        val = cur
        if err <= 1e-10 * max(1.0, abs(val)):
            break
    return MomentEstimate(val, err, f"quadrature(gh{order})")


_MC_POINTS = 2 ** 22
_MC_SPLITS = 8


def _sobol_scrambles(k, seed):
    """Yield standard-normal point sets from independently scrambled Sobol."""
    m = _MC_POINTS // _MC_SPLITS
    seq = np.random.SeedSequence([0x5B55, int(seed)])
    for child in seq.spawn(_MC_SPLITS):
        qrng = stats.qmc.Sobol(d=k, scramble=True,
                               seed=np.random.default_rng(child))
        u = qrng.random(m)
        # keep strictly inside (0,1); scrambled Sobol can emit exact 0
        yield ndtri(np.clip(u, 1e-15, 1.0 - 1e-15))


def _abs_power_prod(x, powers):
    prod = np.ones(x.shape[0])
    for j, p in enumerate(powers):
        prod *= np.abs(x[:, j]) ** p
    return prod


def _sobol_estimate(powers, corr, seed=0):
    """Scrambled-Sobol Monte Carlo; error = 3 SE over independent scrambles."""
    factor = _factor_eigh(corr)
    means = []
    for z in _sobol_scrambles(factor.shape[0], seed):
        means.append(_abs_power_prod(z @ factor.T, powers).mean())
    means = np.asarray(means)
    se = means.std(ddof=1) / math.sqrt(_MC_SPLITS)
    return MomentEstimate(float(means.mean()), 3.0 * float(se), "mc(sobol)")


def _sobol_cov_estimate(powers, corr_full, corr_bd, ka, seed=0):
    """E[prod] under corr_full minus the product of block means, with the
    same points driving both (the difference is what is small, so common
    random numbers cut its variance by orders of magnitude)."""
    f_full = _factor_chol(corr_full)
    f_bd = _factor_chol(corr_bd)
    vals = []
    for z in _sobol_scrambles(f_full.shape[0], seed):
        joint = _abs_power_prod(z @ f_full.T, powers).mean()
        x_bd = z @ f_bd.T
        ea = _abs_power_prod(x_bd[:, :ka], powers[:ka]).mean()
        eb = _abs_power_prod(x_bd[:, ka:], powers[ka:]).mean()
        vals.append(joint - ea * eb)
    vals = np.asarray(vals)
    se = vals.std(ddof=1) / math.sqrt(_MC_SPLITS)
    return MomentEstimate(float(vals.mean()), 3.0 * float(se), "mc(sobol)")


# ---------------------------------------------------------------------------
# dispatch

def _merge_duplicates(powers, corr):
    """Merge coordinates that are perfectly (anti)correlated.

    |X_j| = |X_i| almost surely when corr(X_i, X_j) = +-1, so the powers
    simply add. Keeps the quadrature covariance nonsingular for lag-0
    blocks where the same increment enters twice.
    """
    k = len(powers)
    keep = []
    pw = list(powers)
    merged_into = [-1] * k
    for j in range(k):
        target = -1
        for i in keep:
            if abs(abs(corr[i, j]) - 1.0) < 1e-12:
                target = i
                break
        if target >= 0:
            pw[target] += pw[j]
            merged_into[j] = target
        else:
            keep.append(j)
    if len(keep) == k:
        return powers, corr
    idx = np.array(keep)
    return tuple(pw[i] for i in keep), corr[np.ix_(idx, idx)]


def mixed_abs_moment(pv, cov, method="auto", report=False, mc_seed=0):
    """E[prod_j |X_j|^{p_j}] for a correlated standard Gaussian vector.

    pv: PowerVector (or anything PowerVector() accepts); cov: GaussianBlockCov
    or a raw correlation matrix. method: "auto" uses closed forms where they
    exist, "quadrature" forces Gauss-Hermite (useful as an independent route),
    "mc" forces scrambled-Sobol MC. With report=True a MomentEstimate
    (value, error, method) is returned instead of a bare float.
    """
    if not isinstance(pv, PowerVector):
        pv = PowerVector(tuple(pv))
    if not isinstance(cov, GaussianBlockCov):
        cov = GaussianBlockCov(np.asarray(cov, dtype=float))
    if cov.dim != pv.k:
        raise ValidationError(
            f"power vector has k={pv.k} but covariance is {cov.dim}x{cov.dim}")
    if method not in ("auto", "quadrature", "mc"):
        raise ValidationError(f"unknown method {method!r}")

    # exponents equal to zero contribute a factor 1 and drop out
    alive = [j for j, p in enumerate(pv.powers) if p > 0.0]
    if not alive:
        out = MomentEstimate(1.0, 0.0, "closed_form")
        return out if report else out.value
    powers = tuple(pv.powers[j] for j in alive)
    corr = cov.entries[np.ix_(alive, alive)]
    powers, corr = _merge_duplicates(powers, corr)
    k = len(powers)

    if method == "auto":
        if k == 1:
            out = MomentEstimate(mu_p(powers[0]), 0.0, "closed_form")
            return out if report else out.value
        if k == 2 and powers == (1.0, 1.0):
            out = MomentEstimate((2.0 / math.pi) * psi(corr[0, 1]), 0.0,
                                 "closed_form")
            return out if report else out.value
        if k == 3 and sorted(powers) == [1.0, 1.0, 2.0]:
            j2 = powers.index(2.0)
            ja, jb = [j for j in range(3) if j != j2]
            out = MomentEstimate(
                nabeya_h(corr[j2, ja], corr[j2, jb], corr[ja, jb]), 0.0,
                "closed_form")
            return out if report else out.value

    if method != "mc" and k > 4:
        method = "mc"
    singular = k > 1 and np.linalg.eigvalsh(corr)[0] <= 1e-10
    if singular and method == "quadrature":
        # a genuine linear dependence is left after duplicate merging;
        # quadrature cannot certify its error there
        raise DegenerateCovarianceError(
            "correlation matrix is singular; quadrature not available")
    if method == "mc" or singular or (
            method == "auto" and k > 1 and not _all_even(powers)):
        # no closed form and a kinked integrand: quasi-MC beats quadrature
        out = _sobol_estimate(powers, corr, seed=mc_seed)
    else:
        out = _gh_estimate(powers, corr, max_order=160 if k <= 3 else 80)
        if method == "auto" and (not np.isfinite(out.error)
                                 or out.error > 1e-6 * max(1.0, abs(out.value))):
            mc = _sobol_estimate(powers, corr, seed=mc_seed)
            if mc.error < out.error:
                out = mc
    return out if report else out.value


def _rho_values(rho):
    if hasattr(rho, "values"):
        return np.asarray(rho.values, dtype=float)
    return np.asarray(rho, dtype=float)


def _corr_from_offsets(offsets, rho):
    vals = _rho_values(rho)
    off = np.asarray(offsets)
    lagmat = np.abs(off[:, None] - off[None, :])
    if lagmat.max() >= len(vals):
        raise ValidationError(
            f"need correlations up to lag {lagmat.max()}, got {len(vals) - 1}")
    return vals[lagmat]


def multipower_cov(pv_a, pv_b, rho, lag, method="auto", report=False,
                   mc_seed=0):
    """cov(prod_j |Q_{i+j}|^{p^a_j}, prod_j |Q_{i+lag+j}|^{p^b_j}).

    Q is the stationary unit-variance Gaussian sequence with correlations
    rho(|i-j|); rho may be a plain sequence of values rho(0..J) or any object
    with a .values attribute. Overlapping windows (lag smaller than the first
    block) are legal; shared increments are merged.

    For non-overlapping windows the covariance is computed as a difference
    of the joint moment and the block-independent moment on a common grid
    (quadrature) or common point set (MC), which is far more accurate than
    subtracting separately computed moments. method="quadrature" forces the
    Gauss-Hermite route end to end, giving a check channel fully independent
    of the closed-form series.
    """
    if not isinstance(pv_a, PowerVector):
        pv_a = PowerVector(tuple(pv_a))
    if not isinstance(pv_b, PowerVector):
        pv_b = PowerVector(tuple(pv_b))
    if method not in ("auto", "quadrature", "mc"):
        raise ValidationError(f"unknown method {method!r}")
    lag = int(lag)
    if lag < 0:
        raise ValidationError("lag must be >= 0")

    off_a = [j for j, p in enumerate(pv_a.powers) if p > 0.0]
    off_b = [lag + j for j, p in enumerate(pv_b.powers) if p > 0.0]
    pow_a = [pv_a.powers[j] for j in off_a]
    pow_b = [pv_b.powers[j - lag] for j in off_b]
    if not off_a or not off_b:
        out = MomentEstimate(0.0, 0.0, "closed_form")  # a constant factor
        return out if report else out.value

    overlap = max(off_a) >= min(off_b)
    if not overlap:
        powers = tuple(pow_a + pow_b)
        corr_full = _corr_from_offsets(off_a + off_b, rho)
        ka = len(off_a)
        corr_bd = corr_full.copy()
        corr_bd[:ka, ka:] = 0.0
        corr_bd[ka:, :ka] = 0.0
        k = len(powers)

        def _even_block_at():
            # one block being a single even power allows the reduced route
            if ka == 1 and pow_a[0] % 2 == 0 and pow_a[0] == int(pow_a[0]):
                return 0
            if k - ka == 1 and pow_b[0] % 2 == 0 and pow_b[0] == int(pow_b[0]):
                return ka
            return -1

        e = _even_block_at()
        if method == "mc":
            out = _sobol_cov_estimate(powers, corr_full, corr_bd, ka,
                                      seed=mc_seed)
        elif _all_even(powers):
            out = _gh_cov_estimate(powers, corr_full, corr_bd)
        elif e >= 0 and k <= 4:
            odd = [j for j in range(k) if j != e]
            out = _gh_cov_reduced(powers[e], [powers[j] for j in odd],
                                  corr_full[np.ix_(odd, odd)],
                                  corr_full[odd, e])
        elif method == "quadrature":
            out = _gh_cov_estimate(powers, corr_full, corr_bd,
                                   max_order=160 if k <= 3 else 80)
        else:
            out = _sobol_cov_estimate(powers, corr_full, corr_bd, ka,
                                      seed=mc_seed)
        return out if report else out.value

    # overlapping windows share increments; merge and compute the three
    # moments directly (closed forms cover the small cases that arise here)
    def _moment(powers, offsets):
        corr = _corr_from_offsets(offsets, rho)
        powers, corr = _merge_duplicates(tuple(powers), corr)
        if method == "quadrature" and len(powers) > 1:
            return _gh_estimate(powers, corr)
        if len(powers) == 1:
            return MomentEstimate(mu_p(powers[0]), 0.0, "closed_form")
        return mixed_abs_moment(PowerVector(tuple(powers)),
                                GaussianBlockCov(corr), method=method,
                                report=True, mc_seed=mc_seed)

    ea = _moment(pow_a, off_a)
    eb = _moment(pow_b, off_b)
    ejoint = _moment(pow_a + pow_b, off_a + off_b)
    value = ejoint.value - ea.value * eb.value
    err = ejoint.error + abs(ea.value) * eb.error + abs(eb.value) * ea.error
    out = MomentEstimate(value, err, ejoint.method)
    return out if report else out.value
