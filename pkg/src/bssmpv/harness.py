"""Seeded Monte Carlo experiment runner.

Each experiment kind turns one of the limit statements into a pass/fail
check at desk scale: LLN sweeps track the sup deviation of the
normalized statistic from its target across a frequency grid, CLT runs
studentize the scaled error at the largest frequency and test
normality, RVR runs check the variation-ratio level and (when the local
exponent allows) its studentized limit, the degenerate exponential-
window example checks the two-term limit instead of the standard one,
and robustness runs compare statistics with and without a drift
component.

Verdicts are numbered rules (see VERDICT_RULES); every verdict in a
report cites its rule id, the observed value, and the threshold it was
held against.  Thresholds are calibration constants of this artifact,
not theory, and can be overridden in the [experiment] config section.

Reports are reproducible: the resolved config plus the master seed
determine every number, replicate streams are indexed so execution
order cannot matter, and serialization is canonical (sorted JSON keys,
fixed CSV column order, no wall-clock content).
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.stats import kstest

from .asymptotics import beta_matrix, clt_variance_process, studentize_rvr
from .errors import ConditionError, ConditionWarning, RobustnessWarning, \
    ValidationError
from .gaussmom import psi
from .kernels import ExponentialKernel, PowerLawKernel, build_covariance, \
    check_conditions, kernel_from_config, kernel_to_config, limit_correlation
from .mpv import centering as window_centering
from .mpv import multipower, rvr
from .pathsim import ConstantVol, DeterministicVol, LipschitzDrift, \
    SmootherBssDrift, add_drift, simulate_bss, vol_from_config, vol_to_config

KINDS = ("lln", "clt", "rvr", "degenerate_exp", "robustness")

VERDICT_RULES = {
    "R1": "mean sup deviation decreases along the frequency grid",
    "R2": "mean sup deviation at the largest frequency is below threshold",
    "R3": "KS p-value of the studentized sample exceeds the level",
    "R4": "empirical over predicted variance ratio lies inside the band",
    "R5": "scaled-vector covariance is within the Frobenius tolerance of "
          "the predicted matrix",
    "R6": "mean variation ratio is within tolerance of its limit",
    "R7": "largest deviation from the two-term limit is below threshold",
    "R8": "statistic difference with drift on and off is below threshold",
    "R9": "the scaled drift difference stays bounded along the frequency "
          "grid",
}

DEFAULT_THRESHOLDS = {
    "sup_error": 0.05,
    "variance_band": 0.15,
    "frobenius_tolerance": 0.20,
    "ks_level": 0.01,
    "rvr_tolerance": 0.02,
    "limit_deviation": 0.03,
    "drift_difference": 0.01,
    "drift_growth_factor": 2.0,
}


def _thread_count():
    raw = os.environ.get("BSSMPV_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"BSSMPV_THREADS must be an integer, got {raw!r}")


def _map_replicates(fn, count):
    """Run fn(0..count-1); results come back ordered by replicate index
    regardless of scheduling, so summaries cannot depend on timing."""
    workers = _thread_count()
    if workers == 1:
        return [fn(r) for r in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(count)))


def _pv_label(pv):
    def one(p):
        return str(int(p)) if float(p) == int(p) else str(float(p))
    return "V(" + ",".join(one(p) for p in pv) + ")"


def _p_plus(pv):
    return float(sum(pv))


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    """Everything a run needs; (config, seed) pins every report number."""

    kind: str
    kernel: object
    vol: object
    powers: tuple
    n_list: tuple
    replications: int
    seed: int
    centering: str = "finite_n"
    horizon: float = 1.0
    gamma_vol: float | None = None
    drift: object = None
    thresholds: dict = field(default_factory=dict)
    out_json: str | None = None
    out_csv: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(
                f"unknown experiment kind {self.kind!r}; expected one of "
                + ", ".join(KINDS))
        powers = tuple(tuple(float(p) for p in pv) for pv in self.powers)
        if not powers:
            raise ValidationError("at least one power vector is required")
        for pv in powers:
            if not pv or any(p < 0 for p in pv):
                raise ValidationError(f"invalid power vector {pv}")
        object.__setattr__(self, "powers", powers)
        n_list = tuple(int(n) for n in self.n_list)
        if not n_list or any(n < 8 for n in n_list):
            raise ValidationError("n_list needs entries >= 8")
        if any(b <= a for a, b in zip(n_list, n_list[1:])):
            raise ValidationError("n_list must be strictly increasing")
        object.__setattr__(self, "n_list", n_list)
        if self.replications < 1:
            raise ValidationError("replications must be positive")
        if self.kind == "clt" and self.replications < 100:
            raise ValidationError(
                "CLT experiments need at least 100 replications for the "
                "normality diagnostics to mean anything")
        if self.centering not in ("finite_n", "limit"):
            raise ValidationError(
                f"centering must be 'finite_n' or 'limit', got "
                f"{self.centering!r}")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        merged = dict(DEFAULT_THRESHOLDS)
        for key, val in self.thresholds.items():
            if key not in DEFAULT_THRESHOLDS:
                raise ValidationError(f"unknown threshold {key!r}")
            merged[key] = float(val)
        object.__setattr__(self, "thresholds", merged)


def _parse_powers(text):
    out = []
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        try:
            out.append(tuple(float(tok) for tok in part.split(",")))
        except ValueError:
            raise ValidationError(f"cannot parse power vector {part!r}")
    return tuple(out)


def _drift_from_config(items):
    items = dict(items)
    family = items.pop("family", None)
    if family in (None, "none"):
        return None
    if family == "lipschitz":
        drift = LipschitzDrift(rate=float(items.pop("rate", "1.0")))
    elif family == "smoother_bss":
        if "delta" not in items:
            raise ValidationError("smoother_bss drift needs delta")
        kernel = PowerLawKernel(delta=float(items.pop("delta")))
        drift = SmootherBssDrift(kernel=kernel, process=ConstantVol(1.0),
                                 subgrid=int(items.pop("subgrid", "16")))
    else:
        raise ValidationError(f"unknown drift family {family!r}")
    if items:
        raise ValidationError(
            "unknown drift options: " + ", ".join(sorted(items)))
    return drift


def _drift_items(drift):
    if drift is None:
        return None
    if isinstance(drift, LipschitzDrift):
        return {"family": "lipschitz", "rate": str(drift.rate)}
    if isinstance(drift, SmootherBssDrift):
        return {"family": "smoother_bss",
                "delta": str(drift.kernel.delta),
                "subgrid": str(drift.subgrid)}
    return {"family": type(drift).__name__}


def load_config(source):
    """Experiment config from an INI file path or its literal text."""
    text = str(source)
    if "\n" not in text and os.path.exists(text):
        with open(text, "r", encoding="utf-8") as fh:
            text = fh.read()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config parse failure: {exc}")
    if "experiment" not in parser:
        raise ValidationError("config needs an [experiment] section")
    if "kernel" not in parser:
        raise ValidationError("config needs a [kernel] section")
    exp = parser["experiment"]
    for key in ("kind", "powers", "n_list", "replications", "seed"):
        if key not in exp:
            raise ValidationError(f"[experiment] is missing {key!r}")
    thresholds = {key: exp[key] for key in DEFAULT_THRESHOLDS if key in exp}
    gamma_vol = exp.get("gamma_vol")
    vol = vol_from_config(dict(parser["vol"])) if "vol" in parser \
        else ConstantVol(1.0)
    drift = _drift_from_config(parser["drift"]) if "drift" in parser else None
    try:
        return ExperimentConfig(
            kind=exp["kind"].strip().lower(),
            kernel=kernel_from_config(dict(parser["kernel"])),
            vol=vol,
            powers=_parse_powers(exp["powers"]),
            n_list=tuple(int(tok) for tok in exp["n_list"].split(",")),
            replications=exp.getint("replications"),
            seed=exp.getint("seed"),
            centering=exp.get("centering", "finite_n").strip(),
            horizon=exp.getfloat("horizon", 1.0),
            gamma_vol=float(gamma_vol) if gamma_vol is not None else None,
            drift=drift,
            thresholds=thresholds,
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"config field parse failure: {exc}")


# ---------------------------------------------------------------------------
# reports

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        val = float(obj)
        return val if math.isfinite(val) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass(frozen=True)
class ExperimentReport:
    """Summaries, diagnostics, and rule-tagged verdicts for one run."""

    kind: str
    rows: tuple
    diagnostics: dict
    verdicts: tuple
    environment: dict

    @property
    def passed(self):
        return all(v["passed"] for v in self.verdicts)

    def to_json(self):
        payload = {
            "kind": self.kind,
            "rows": _jsonable(list(self.rows)),
            "diagnostics": _jsonable(self.diagnostics),
            "verdicts": _jsonable(list(self.verdicts)),
            "environment": _jsonable(self.environment),
            "passed": self.passed,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        keys = ["n", "statistic"]
        extra = sorted({k for row in self.rows for k in row}
                       - {"n", "statistic"})
        writer.writerow(keys + extra)
        for row in self.rows:
            writer.writerow([row.get(k, "") for k in keys + extra])
        writer.writerow([])
        writer.writerow(["rule", "rule_text", "statistic", "observed",
                         "threshold", "passed"])
        for v in self.verdicts:
            writer.writerow([v["rule"], v["rule_text"], v["statistic"],
                             v["observed"], v["threshold"], v["passed"]])
        return buf.getvalue()


def write_report(report, json_path=None, csv_path=None):
    if json_path:
        with open(json_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    if csv_path:
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())


def _verdict(rule, statistic, passed, observed, threshold):
    return {"rule": rule, "rule_text": VERDICT_RULES[rule],
            "statistic": statistic, "observed": _jsonable(observed),
            "threshold": _jsonable(threshold), "passed": bool(passed)}


def _kernel_items(spec):
    parser = configparser.ConfigParser()
    parser.read_string(kernel_to_config(spec))
    return dict(parser["kernel"])


def _environment(cfg):
    try:
        version = metadata.version("bssmpv")
    except metadata.PackageNotFoundError:
        version = "unpackaged"
    return {
        "config": {
            "kind": cfg.kind,
            "powers": [list(pv) for pv in cfg.powers],
            "n_list": list(cfg.n_list),
            "replications": cfg.replications,
            "seed": cfg.seed,
            "centering": cfg.centering,
            "horizon": cfg.horizon,
            "gamma_vol": cfg.gamma_vol,
            "thresholds": dict(cfg.thresholds),
            "kernel": _kernel_items(cfg.kernel),
            "vol": {k: str(v) for k, v in vol_to_config(cfg.vol).items()},
            "drift": _drift_items(cfg.drift),
        },
        "package_version": version,
        "numpy_version": np.__version__,
        "threads": _thread_count(),
    }


# ---------------------------------------------------------------------------
# shared per-replicate pieces

def _sigma_integral_curve(bundle, p_plus, t_grid):
    """integral_0^t of |sigma_s|^p_plus from the realized volatility path,
    interpolated onto the report grid."""
    sig = np.abs(np.asarray(bundle.sigma_path, dtype=float))
    ts = np.linspace(0.0, bundle.horizon, sig.size)
    curve = cumulative_trapezoid(sig ** p_plus, ts, initial=0.0)
    return np.interp(t_grid, ts, curve)


def _summary_row(n, label, samples, prefix="mean"):
    samples = np.asarray(samples, dtype=float)
    sd = float(samples.std(ddof=1)) if samples.size > 1 else 0.0
    return {"n": n, "statistic": label,
            prefix: float(samples.mean()),
            "sd": sd,
            "mc_se": sd / math.sqrt(samples.size)}


def _require_kind(cfg, kind):
    if cfg.kind != kind:
        raise ValidationError(
            f"this runner handles kind={kind!r}, config says {cfg.kind!r}")


def _require_conditions(cfg, stage):
    gv = cfg.gamma_vol
    if gv is None:
        gv = float(getattr(cfg.vol, "gamma_vol", 1.0))
    report = check_conditions(cfg.kernel, list(cfg.powers), gamma_vol=gv)
    ok = report.lln_ok if stage == "lln" else report.clt_ok
    if not ok:
        notes = "; ".join(report.notes) if report.notes else "no detail"
        raise ConditionError(
            f"the {stage} conditions fail for this configuration: {notes}")
    return report


# ---------------------------------------------------------------------------
# runners

def run_lln(cfg):
    """Sup deviation of the normalized statistic from its target, swept
    over the frequency grid.  Verdicts: R1 (decreasing), R2 (final level).
    """
    _require_kind(cfg, "lln")
    if isinstance(cfg.kernel, ExponentialKernel):
        raise ConditionError(
            "the truncated exponential window does not concentrate at the "
            "origin and has a two-term limit; run kind=degenerate_exp "
            "instead")
    _require_conditions(cfg, "lln")
    model = build_covariance(cfg.kernel)
    rows = []
    means = {pv: [] for pv in cfg.powers}
    for n in cfg.n_list:
        tau = model.tau(n)
        rho = {pv: window_centering(model, pv, n=n, mode=cfg.centering)
               for pv in cfg.powers}

        def one(rep, n=n, tau=tau, rho=rho):
            bundle = simulate_bss(cfg.kernel, cfg.vol, n, cfg.horizon,
                                  cfg.seed, replicate=rep)
            out = []
            for pv in cfg.powers:
                res = multipower(bundle, pv, tau=tau, model=model)
                target = rho[pv] * _sigma_integral_curve(
                    bundle, _p_plus(pv), res.t_grid)
                out.append(float(np.max(np.abs(res.values - target))))
            return out

        sup = np.asarray(_map_replicates(one, cfg.replications))
        for k, pv in enumerate(cfg.powers):
            rows.append(_summary_row(n, _pv_label(pv), sup[:, k],
                                     prefix="mean_sup_error"))
            means[pv].append(float(sup[:, k].mean()))
    verdicts = []
    for pv in cfg.powers:
        seq = means[pv]
        label = _pv_label(pv)
        verdicts.append(_verdict(
            "R1", label, all(b < a for a, b in zip(seq, seq[1:])),
            observed=seq, threshold="strictly decreasing"))
        verdicts.append(_verdict(
            "R2", label, seq[-1] < cfg.thresholds["sup_error"],
            observed=seq[-1], threshold=cfg.thresholds["sup_error"]))
    diagnostics = {"centering": cfg.centering,
                   "report_grid": "sample grid thinned to at most 1024 "
                                  "points; sup is taken over that grid"}
    return ExperimentReport("lln", tuple(rows), diagnostics,
                            tuple(verdicts), _environment(cfg))


def run_clt(cfg):
    """Studentized scaled error at the largest frequency.  Verdicts: R3
    (KS), R4 (variance ratio) per statistic, R5 (joint covariance) when
    more than one power vector is configured."""
    _require_kind(cfg, "clt")
    _require_conditions(cfg, "clt")
    model = build_covariance(cfg.kernel)
    beta = beta_matrix(cfg.powers, model.alpha)
    n = cfg.n_list[-1]
    tau = model.tau(n)
    rho = {pv: window_centering(model, pv, n=n, mode=cfg.centering)
           for pv in cfg.powers}
    d = len(cfg.powers)

    def one(rep):
        bundle = simulate_bss(cfg.kernel, cfg.vol, n, cfg.horizon,
                              cfg.seed, replicate=rep)
        sig = np.abs(np.asarray(bundle.sigma_path, dtype=float))
        ts = np.linspace(0.0, cfg.horizon, sig.size)
        predicted = clt_variance_process(beta, sig, times=ts).integrated[-1]
        errs = np.empty(d)
        for i, pv in enumerate(cfg.powers):
            res = multipower(bundle, pv, tau=tau, model=model)
            target = rho[pv] * float(_sigma_integral_curve(
                bundle, _p_plus(pv), res.t_grid[-1:])[0])
            errs[i] = math.sqrt(n) * (float(res.values[-1]) - target)
        return errs, predicted

    results = _map_replicates(one, cfg.replications)
    errs = np.stack([r[0] for r in results])
    preds = np.stack([r[1] for r in results])
    rows, verdicts = [], []
    for i, pv in enumerate(cfg.powers):
        label = _pv_label(pv)
        stud = errs[:, i] / np.sqrt(preds[:, i, i])
        ks = kstest(stud, "norm")
        ratio = float(errs[:, i].var(ddof=1) / preds[:, i, i].mean())
        row = _summary_row(n, label, errs[:, i], prefix="mean_scaled_error")
        row.update({"ks_stat": float(ks.statistic),
                    "ks_pvalue": float(ks.pvalue),
                    "variance_ratio": ratio,
                    "predicted_variance": float(preds[:, i, i].mean())})
        rows.append(row)
        level = cfg.thresholds["ks_level"]
        band = cfg.thresholds["variance_band"]
        verdicts.append(_verdict("R3", label, ks.pvalue > level,
                                 observed=float(ks.pvalue), threshold=level))
        verdicts.append(_verdict(
            "R4", label, 1.0 - band <= ratio <= 1.0 + band,
            observed=ratio, threshold=[1.0 - band, 1.0 + band]))
    diagnostics = {"beta": beta.to_dict(), "centering": cfg.centering}
    if d >= 2:
        emp = np.cov(errs, rowvar=False, ddof=1)
        pred = preds.mean(axis=0)
        frob = float(np.linalg.norm(emp - pred)
                     / np.linalg.norm(pred))
        tol = cfg.thresholds["frobenius_tolerance"]
        verdicts.append(_verdict("R5", "joint", frob <= tol,
                                 observed=frob, threshold=tol))
        diagnostics["empirical_covariance"] = emp
        diagnostics["predicted_covariance"] = pred
    return ExperimentReport("clt", tuple(rows), diagnostics,
                            tuple(verdicts), _environment(cfg))


def run_rvr(cfg):
    """Variation-ratio level check at the largest frequency; adds the
    studentized normality check when the local exponent is below one.
    Verdicts: R6 (level), R3 (KS, when applicable)."""
    _require_kind(cfg, "rvr")
    model = build_covariance(cfg.kernel)
    alpha = model.alpha
    rho1 = float(limit_correlation(alpha, 1)[1])
    target = psi(rho1)
    n = cfg.n_list[-1]
    tau = model.tau(n)
    clt_part = 0.0 < alpha < 1.0

    def one(rep):
        bundle = simulate_bss(cfg.kernel, cfg.vol, n, cfg.horizon,
                              cfg.seed, replicate=rep)
        ratio = rvr(bundle, model)
        v2 = multipower(bundle, (2.0,), tau=tau, model=model) \
            if clt_part else None
        return ratio, v2

    results = _map_replicates(one, cfg.replications)
    finals = np.asarray([float(r[0].rvr_t[-1]) for r in results])
    rows = [_summary_row(n, "RVR", finals)]
    verdicts = [_verdict(
        "R6", "RVR", abs(finals.mean() - target)
        < cfg.thresholds["rvr_tolerance"],
        observed=float(finals.mean() - target),
        threshold=cfg.thresholds["rvr_tolerance"])]
    diagnostics = {"psi_limit": target, "rho1": rho1, "alpha": alpha,
                   "psi_finite_n": results[0][0].psi_center["finite_n"]}
    if clt_part:
        beta = beta_matrix([(1.0, 1.0), (2.0,)], alpha)
        stud = studentize_rvr([r[0] for r in results], beta,
                              [r[1] for r in results],
                              centering=cfg.centering)
        level = cfg.thresholds["ks_level"]
        row = _summary_row(n, "RVR_studentized", stud.samples)
        row.update({"ks_stat": float(stud.ks_stat),
                    "ks_pvalue": float(stud.ks_pvalue)})
        rows.append(row)
        verdicts.append(_verdict("R3", "RVR_studentized",
                                 stud.ks_pvalue > level,
                                 observed=float(stud.ks_pvalue),
                                 threshold=level))
        diagnostics["studentized"] = stud.limit_law
    else:
        diagnostics["clt_part"] = ("skipped: the studentized ratio limit "
                                   "needs a local exponent below 1, got "
                                   f"{alpha}")
    return ExperimentReport("rvr", tuple(rows), diagnostics,
                            tuple(verdicts), _environment(cfg))


def run_degenerate_exp(cfg):
    """Realized-variance limit under the truncated exponential window:
    the statistic converges to a two-term weighted integral, not the
    plain integrated squared volatility.  Verdict: R7 (max deviation)."""
    _require_kind(cfg, "degenerate_exp")
    if not isinstance(cfg.kernel, ExponentialKernel):
        raise ValidationError(
            "kind=degenerate_exp requires the truncated exponential kernel")
    if not isinstance(cfg.vol, (ConstantVol, DeterministicVol)):
        raise ValidationError(
            "the two-term limit needs deterministic volatility known on "
            "[-1, horizon]")
    lam = float(cfg.kernel.rate)
    w_here = 1.0 / (1.0 + math.exp(-2.0 * lam))
    w_past = 1.0 / (1.0 + math.exp(2.0 * lam))
    model = build_covariance(cfg.kernel)
    n = cfg.n_list[-1]
    tau = model.tau(n)

    def sigma_sq_integral(a, b):
        if isinstance(cfg.vol, ConstantVol):
            return float(cfg.vol.level) ** 2 * (b - a)
        ts = np.linspace(a, b, 2049)
        vals = np.asarray(cfg.vol.evaluate(ts), dtype=float)
        return float(np.trapezoid(vals ** 2, ts))

    def one(rep):
        with warnings.catch_warnings():
            # degenerate regime is the point of this experiment
            warnings.simplefilter("ignore", ConditionWarning)
            bundle = simulate_bss(cfg.kernel, cfg.vol, n, cfg.horizon,
                                  cfg.seed, replicate=rep)
        res = multipower(bundle, (2.0,), tau=tau)
        return res.t_grid, res.values

    results = _map_replicates(one, cfg.replications)
    grid = results[0][0]
    values = np.stack([r[1] for r in results])
    mc_mean = values.mean(axis=0)
    limit = np.asarray([w_here * sigma_sq_integral(0.0, t)
                        + w_past * sigma_sq_integral(-1.0, t - 1.0)
                        for t in grid])
    deviation = float(np.max(np.abs(mc_mean - limit)))
    rows = [{"n": n, "statistic": "V(2)",
             "max_abs_deviation": deviation,
             "mc_se": float(values.std(ddof=1, axis=0).max()
                            / math.sqrt(values.shape[0]))}]
    verdicts = [_verdict("R7", "V(2)",
                         deviation < cfg.thresholds["limit_deviation"],
                         observed=deviation,
                         threshold=cfg.thresholds["limit_deviation"])]
    diagnostics = {
        "weights": {"current_window": w_here, "shifted_window": w_past},
        "t": grid, "mc_mean": mc_mean, "limit": limit,
        "note": "condition warnings from path synthesis are filtered; the "
                "degenerate regime is intentional here",
    }
    return ExperimentReport("degenerate_exp", tuple(rows), diagnostics,
                            tuple(verdicts), _environment(cfg))


def run_robustness(cfg):
    """Statistics with and without the configured drift across the
    frequency grid.  Verdicts: R8 (final difference small), R9 (scaled
    difference bounded)."""
    _require_kind(cfg, "robustness")
    if cfg.drift is None:
        raise ValidationError("kind=robustness needs a [drift] section")
    model = build_covariance(cfg.kernel)
    rows = []
    sup_means = {pv: [] for pv in cfg.powers}
    scaled_means = {pv: [] for pv in cfg.powers}
    warned = 0
    for n in cfg.n_list:
        tau = model.tau(n)

        def one(rep, n=n, tau=tau):
            base = simulate_bss(cfg.kernel, cfg.vol, n, cfg.horizon,
                                cfg.seed, replicate=rep)
            with warnings.catch_warnings(record=True) as wl:
                warnings.simplefilter("always")
                shifted = add_drift(base, cfg.drift)
            flag = any(isinstance(w.message, RobustnessWarning) for w in wl)
            out = []
            for pv in cfg.powers:
                plain = multipower(base, pv, tau=tau)
                moved = multipower(shifted, pv, tau=tau)
                sup = float(np.max(np.abs(moved.values - plain.values)))
                scaled = math.sqrt(n) * abs(float(moved.values[-1])
                                            - float(plain.values[-1]))
                out.append((sup, scaled))
            return out, flag

        results = _map_replicates(one, cfg.replications)
        warned += sum(1 for _, flag in results if flag)
        for k, pv in enumerate(cfg.powers):
            sups = np.asarray([r[0][k][0] for r in results])
            scls = np.asarray([r[0][k][1] for r in results])
            row = _summary_row(n, _pv_label(pv), sups,
                               prefix="mean_sup_difference")
            row["mean_scaled_difference"] = float(scls.mean())
            rows.append(row)
            sup_means[pv].append(float(sups.mean()))
            scaled_means[pv].append(float(scls.mean()))
    verdicts = []
    for pv in cfg.powers:
        label = _pv_label(pv)
        verdicts.append(_verdict(
            "R8", label,
            sup_means[pv][-1] < cfg.thresholds["drift_difference"],
            observed=sup_means[pv][-1],
            threshold=cfg.thresholds["drift_difference"]))
        seq = scaled_means[pv]
        factor = cfg.thresholds["drift_growth_factor"]
        cap = max(factor * seq[0], 1e-9)
        verdicts.append(_verdict("R9", label, max(seq) <= cap,
                                 observed=seq, threshold=cap))
    diagnostics = {"robustness_warnings": warned,
                   "drift": _drift_items(cfg.drift)}
    return ExperimentReport("robustness", tuple(rows), diagnostics,
                            tuple(verdicts), _environment(cfg))


_RUNNERS = {
    "lln": run_lln,
    "clt": run_clt,
    "rvr": run_rvr,
    "degenerate_exp": run_degenerate_exp,
    "robustness": run_robustness,
}


def run_experiment(cfg):
    """Dispatch on cfg.kind and write any configured output files."""
    report = _RUNNERS[cfg.kind](cfg)
    write_report(report, json_path=cfg.out_json, csv_path=cfg.out_csv)
    return report
