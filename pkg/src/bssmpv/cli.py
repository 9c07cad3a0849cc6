"""Command-line front end.

Five subcommands: ``simulate`` writes paths, ``estimate`` computes
multipower statistics on simulated or ingested series, ``constants``
evaluates asymptotic constants, ``experiment`` runs a configured Monte
Carlo suite, and ``conditions`` reports which limit theorems apply.

Every subcommand is a thin adapter over the library: with the same
resolved configuration it produces byte-identical results to direct
calls. The resolved configuration is echoed to stderr on every run.
Machine output is requested with ``--json`` and follows the schemas
shipped under ``bssmpv/schemas/``.

Exit codes: 0 success, 2 validation failure, 3 simulation failure,
4 data failure, 5 failed experiment verdict.
"""
from __future__ import annotations

import dataclasses
import functools
import importlib.resources
import json
import math
import os
import sys

import click
import numpy as np

from .asymptotics import beta_matrix, bsm_constant_A
from .errors import (BssmpvError, DataError, SimulationError,
                     ValidationError, VerdictFailure)
from .gaussmom import psi
from .harness import _drift_from_config, _parse_powers, load_config, \
    run_experiment
from .kernels import (build_covariance, check_conditions, kernel_from_config,
                      limit_correlation, tabulated_from_csv)
from .mpv import estimate_tau, multipower, rvr
from .pathsim import (add_drift, bundle_from_csv, bundle_to_binary,
                      bundle_to_csv, simulate_bss, vol_from_config)

# ---------------------------------------------------------------------------
# flag grammar: family[:arg{,arg}], arg = key=value or one bare lead value

_KERNEL_FAMILIES = {"powerlaw": "power_law", "power_law": "power_law",
                    "gamma": "gamma", "exp": "exponential",
                    "exponential": "exponential", "tabulated": "tabulated"}
_KERNEL_LEAD = {"power_law": "delta", "gamma": "nu", "exponential": "rate"}
_KERNEL_KEY_ALIASES = {"lambda": "rate"}

_VOL_FAMILIES = {"const": "const", "constant": "const",
                 "expfrac": "expfrac", "exp_fractional": "expfrac",
                 "sinusoid": "sinusoid", "linear": "linear"}
_VOL_LEAD = {"const": "level", "expfrac": "hurst",
             "sinusoid": "amplitude", "linear": "slope"}

_DRIFT_FAMILIES = {"lipschitz": "lipschitz", "smoother_bss": "smoother_bss"}
_DRIFT_LEAD = {"lipschitz": "rate", "smoother_bss": "delta"}


def _parse_flag_spec(text, families, lead_keys, key_aliases=None):
    fam, _, rest = str(text).partition(":")
    fam = fam.strip().lower()
    if fam not in families:
        raise ValidationError(
            f"unknown family {fam!r}; expected one of "
            f"{sorted(set(families))}")
    family = families[fam]
    items = {"family": family}
    tokens = [t.strip() for t in rest.split(",") if t.strip()] if rest else []
    for pos, tok in enumerate(tokens):
        if "=" in tok:
            key, _, value = tok.partition("=")
            key = key.strip().lower()
            key = (key_aliases or {}).get(key, key)
            items[key] = value.strip()
        elif pos == 0 and family in lead_keys:
            items[lead_keys[family]] = tok
        else:
            raise ValidationError(
                f"cannot parse argument {tok!r} in {text!r}; use key=value "
                "(one bare value is allowed in first position)")
    return items


def _kernel_from_flag(text):
    items = _parse_flag_spec(text, _KERNEL_FAMILIES, _KERNEL_LEAD,
                             _KERNEL_KEY_ALIASES)
    if items["family"] == "tabulated":
        if "file" not in items:
            raise ValidationError("tabulated kernel needs file=PATH")
        return tabulated_from_csv(
            items["file"], extrapolation=items.get("extrapolation", "zero"))
    if items["family"] == "gamma":
        items.setdefault("rate", "1.0")
    return kernel_from_config(items)


def _vol_from_flag(text):
    return vol_from_config(
        _parse_flag_spec(text, _VOL_FAMILIES, _VOL_LEAD))


def _drift_from_flag(text):
    if text is None:
        return None
    return _drift_from_config(
        _parse_flag_spec(text, _DRIFT_FAMILIES, _DRIFT_LEAD))


def _kv_params(tokens, allowed):
    out = {}
    for tok in tokens:
        key, eq, value = tok.partition("=")
        key = key.strip().lower()
        if not eq or key not in allowed:
            raise ValidationError(
                f"cannot parse parameter {tok!r}; expected key=value with "
                f"key in {sorted(allowed)}")
        out[key] = value.strip()
    return out


# ---------------------------------------------------------------------------
# plumbing

def _fail(exc, code):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _fail(exc, 2)
        except SimulationError as exc:
            _fail(exc, 3)
        except DataError as exc:
            _fail(exc, 4)
        except VerdictFailure as exc:
            _fail(exc, 5)
        except BssmpvError as exc:
            _fail(exc, 1)
    return wrapped


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
    return obj


def _log_config(payload):
    click.echo("resolved config: "
               + json.dumps(_jsonable(payload), sort_keys=True), err=True)


def _emit_json(doc):
    click.echo(json.dumps(_jsonable(doc), sort_keys=True, indent=2))


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(package_name="bssmpv")
def main():
    """Moving-average process simulation and multipower inference."""


# ---------------------------------------------------------------------------
# simulate

@main.command()
@click.option("--kernel", "kernel_spec", required=True,
              help="Kernel flag, e.g. powerlaw:delta=-0.3 or "
                   "gamma:nu=1.25,lambda=1.")
@click.option("--vol", "vol_spec", default="const:1", show_default=True,
              help="Volatility flag, e.g. const:1 or "
                   "expfrac:hurst=0.75,vol_of_vol=0.5.")
@click.option("--drift", "drift_spec", default=None,
              help="Optional drift flag, e.g. lipschitz:rate=1.")
@click.option("--n", "n", required=True, type=int,
              help="Sampling frequency (grid points per unit time).")
@click.option("--T", "horizon", type=float, default=1.0, show_default=True,
              help="Time horizon.")
@click.option("--seed", required=True, type=int,
              help="Seed; there is no wall-clock fallback.")
@click.option("--replicate", type=int, default=0, show_default=True,
              help="Replicate index within the seed's stream family.")
@click.option("--route", type=click.Choice(["auto", "exact", "convolution"]),
              default="auto", show_default=True)
@click.option("--subgrid", type=int, default=16, show_default=True,
              help="Sub-steps per increment on the convolution route.")
@click.option("-o", "--output", "out_csv",
              type=click.Path(dir_okay=False, writable=True), default=None,
              help="CSV output path (columns t, G, sigma, Y, drift).")
@click.option("--binary", "out_bin",
              type=click.Path(dir_okay=False, writable=True), default=None,
              help="Compact binary output path.")
@click.option("--json", "as_json", is_flag=True,
              help="Print the run metadata as JSON on stdout.")
@_guarded
def simulate(kernel_spec, vol_spec, drift_spec, n, horizon, seed, replicate,
             route, subgrid, out_csv, out_bin, as_json):
    """Simulate a path and write it to CSV and/or binary."""
    kernel = _kernel_from_flag(kernel_spec)
    vol = _vol_from_flag(vol_spec)
    drift = _drift_from_flag(drift_spec)
    if out_csv is None and out_bin is None and not as_json:
        raise ValidationError(
            "nothing to do: pass -o/--output, --binary, or --json")
    _log_config({"command": "simulate", "kernel": kernel_spec,
                 "vol": vol_spec, "drift": drift_spec, "n": n,
                 "horizon": horizon, "seed": seed, "replicate": replicate,
                 "route": route, "subgrid": subgrid,
                 "output": out_csv, "binary": out_bin})
    bundle = simulate_bss(kernel, vol, n, horizon, seed,
                          subgrid=subgrid, route=route, replicate=replicate)
    if drift is not None:
        bundle = add_drift(bundle, drift)
    if out_csv:
        bundle_to_csv(bundle, out_csv)
    if out_bin:
        bundle_to_binary(bundle, out_bin)
    meta = {"n": bundle.n, "horizon": bundle.horizon, "seed": bundle.seed,
            "replicate": replicate, "rows": bundle.length,
            "route": bundle.meta.get("route"),
            "rng": bundle.meta.get("rng"),
            "output": out_csv, "binary": out_bin,
            "columns": [c for c in ("t", "G", "sigma", "Y", "drift")],
            "meta": bundle.meta}
    if as_json:
        _emit_json(meta)
    else:
        click.echo(f"wrote {bundle.length} rows on [0, {bundle.horizon:g}] "
                   f"at frequency n={bundle.n} "
                   f"(route={bundle.meta.get('route')}, seed={seed})")
        for path in (out_csv, out_bin):
            if path:
                click.echo(f"  -> {path}")


# ---------------------------------------------------------------------------
# estimate

def _load_series(path, n_override):
    """Series and frequency from a bundle CSV or a bare one/two-column CSV.

    Returns (series, n, source_label). NaN values are kept; downstream
    statistics refuse them, which is the wanted data-error path.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if first.strip() == "t,G,sigma,Y,drift":
        bundle = bundle_from_csv(path)
        series = bundle.y_path if bundle.y_path is not None \
            else bundle.g_path
        if series is None:
            raise DataError(f"{path} has neither a Y nor a G column")
        return series, int(n_override or bundle.n), "bundle_csv"
    try:
        skip = 0
        try:
            [float(tok) for tok in first.strip().split(",") if tok]
        except ValueError:
            skip = 1
        data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"cannot parse {path} as CSV: {exc}") from exc
    if data.shape[1] == 1:
        series = data[:, 0]
        n = int(n_override) if n_override else len(series) - 1
    elif data.shape[1] == 2:
        series = data[:, 1]
        t = data[:, 0]
        if n_override:
            n = int(n_override)
        else:
            step = float(np.median(np.diff(t)))
            if step <= 0:
                raise DataError("time column must increase")
            n = int(round(1.0 / step))
    else:
        raise DataError(
            f"{path} has {data.shape[1]} columns; expected a bundle CSV "
            "(5 columns) or a one/two-column series")
    return series, n, "series_csv"


def _nonzero_powers(pv):
    return tuple(p for p in pv if p > 0)


@main.command()
@click.option("--input", "input_path", "-i", required=True,
              type=click.Path(dir_okay=False),
              help="Bundle CSV from `simulate`, or a one/two-column CSV.")
@click.option("--powers", "powers_text", required=True,
              help="Power vectors, e.g. \"2\" or \"1,1;2,0\".")
@click.option("--kernel", "kernel_spec", default=None,
              help="Kernel flag; enables model-derived tau and centering.")
@click.option("--tau", "tau_text", default="auto", show_default=True,
              help="'auto' (estimate from the data) or a numeric value; "
                   "ignored when --kernel is given.")
@click.option("--n", "n_override", type=int, default=None,
              help="Sampling frequency override for bare series files.")
@click.option("-o", "--output", "out_csv",
              type=click.Path(dir_okay=False, writable=True), default=None,
              help="CSV output (t plus one column per statistic).")
@click.option("--json-out", "out_json",
              type=click.Path(dir_okay=False, writable=True), default=None,
              help="JSON output path.")
@click.option("--json", "as_json", is_flag=True,
              help="Print the JSON document on stdout.")
@_guarded
def estimate(input_path, powers_text, kernel_spec, tau_text, n_override,
             out_csv, out_json, as_json):
    """Compute multipower statistics (and the variation ratio) on a series."""
    pvs = _parse_powers(powers_text)
    _log_config({"command": "estimate", "input": input_path,
                 "powers": powers_text, "kernel": kernel_spec,
                 "tau": tau_text, "n": n_override,
                 "output": out_csv, "json_out": out_json})
    series, n, source = _load_series(input_path, n_override)
    model = None
    if kernel_spec is not None:
        model = build_covariance(_kernel_from_flag(kernel_spec))
        tau = model.tau(n)
        tau_source = "model"
    elif tau_text.strip().lower() == "auto":
        tau = estimate_tau(series, n=n)
        tau_source = "auto"
    else:
        try:
            tau = float(tau_text)
        except ValueError:
            raise ValidationError(
                f"--tau must be 'auto' or a number, got {tau_text!r}")
        tau_source = "literal"

    # one shared report grid: the longest window's default grid is valid
    # for every shorter one
    widest = max(range(len(pvs)), key=lambda i: len(pvs[i]))
    lead = multipower(series, pvs[widest], tau=tau, n=n, model=model)
    grid = lead.t_grid
    results = [lead if i == widest
               else multipower(series, pv, tau=tau, n=n, model=model,
                               t_grid=grid)
               for i, pv in enumerate(pvs)]
    labels = ["V(" + ",".join(f"{p:g}" for p in pv) + ")" for pv in pvs]

    doc = {"input": input_path, "source": source, "n": n,
           "tau": float(tau), "tau_source": tau_source,
           "powers": [list(pv) for pv in pvs],
           "t_grid": grid,
           "statistics": [
               {"label": lab, "powers": list(pv),
                "final": res.final, "values": res.values,
                "centering": res.centering}
               for lab, pv, res in zip(labels, pvs, results)]}

    bp = next((r for r, pv in zip(results, pvs)
               if _nonzero_powers(pv) == (1.0, 1.0)), None)
    var = next((r for r, pv in zip(results, pvs)
                if _nonzero_powers(pv) == (2.0,)), None)
    if bp is not None and var is not None:
        if model is not None:
            ratio = rvr(series, model, n=n, t_grid=grid)
            doc["rvr"] = {"final": float(ratio.rvr_t[-1]),
                          "values": ratio.rvr_t,
                          "psi_center": ratio.psi_center,
                          "centered": True}
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                raw = (math.pi / 2.0) * bp.raw / var.raw
            doc["rvr"] = {"final": float(raw[-1]), "values": raw,
                          "psi_center": None, "centered": False}

    if out_csv:
        cols = [grid] + [r.values for r in results]
        names = ["t"] + labels
        if "rvr" in doc:
            cols.append(np.asarray(doc["rvr"]["values"], dtype=float))
            names.append("RVR")
        np.savetxt(out_csv, np.column_stack(cols), delimiter=",",
                   header=",".join(names), comments="", fmt="%.17g")
    if out_json:
        with open(out_json, "w", encoding="utf-8") as fh:
            json.dump(_jsonable(doc), fh, sort_keys=True, indent=2)
            fh.write("\n")
    if as_json:
        _emit_json(doc)
    else:
        click.echo(f"n={n}, tau={tau:.6g} ({tau_source})")
        for lab, res in zip(labels, results):
            click.echo(f"  {lab} final = {res.final:.6f}")
        if "rvr" in doc:
            tag = "" if doc["rvr"]["centered"] else " (uncentered)"
            click.echo(f"  RVR final = {doc['rvr']['final']:.6f}{tag}")


# ---------------------------------------------------------------------------
# constants

def _parse_a_powers(text):
    body = text.strip()
    if body.lower().startswith("powers="):
        body = body[len("powers="):]
    return _parse_powers(body)


@main.command()
@click.argument("params", nargs=-1)
@click.option("--psi", "psi_at", type=float, default=None,
              help="Evaluate the bipower correlation factor at this value.")
@click.option("--rho", "want_rho", is_flag=True,
              help="Limiting increment correlations; needs alpha=, "
                   "optional jmax= (default 5).")
@click.option("--A", "a_text", default=None,
              help="Independent-increment variance constant, "
                   "e.g. --A powers=1,1.")
@click.option("--beta", "want_beta", is_flag=True,
              help="Limiting covariance matrix; needs alpha= and powers=.")
@click.option("--json", "as_json", is_flag=True)
@_guarded
def constants(params, psi_at, want_rho, a_text, want_beta, as_json):
    """Evaluate asymptotic constants with method and error tags.

    Free parameters are passed as trailing KEY=VALUE arguments, e.g.::

        constants --rho alpha=1.5 jmax=3
        constants --beta alpha=0.4 powers=2;1,1
    """
    if psi_at is None and not want_rho and a_text is None and not want_beta:
        raise ValidationError(
            "nothing requested: pass --psi, --rho, --A, or --beta")
    kv = _kv_params(params, {"alpha", "jmax", "powers"})
    _log_config({"command": "constants", "psi": psi_at,
                 "rho": want_rho, "A": a_text, "beta": want_beta,
                 "params": kv})
    out = []
    if psi_at is not None:
        if not -1.0 <= psi_at <= 1.0:
            raise ValidationError(
                f"psi takes a correlation in [-1, 1], got {psi_at}")
        out.append({"name": "psi", "argument": psi_at,
                    "value": float(psi(psi_at)),
                    "method": "closed_form", "error_bound": 0.0})
    if want_rho:
        if "alpha" not in kv:
            raise ValidationError("--rho needs alpha=VALUE")
        alpha = float(kv["alpha"])
        jmax = int(kv.get("jmax", 5))
        if jmax < 1:
            raise ValidationError("jmax must be >= 1")
        vals = limit_correlation(alpha, jmax)
        out.append({"name": "rho", "alpha": alpha, "jmax": jmax,
                    "values": [float(v) for v in vals],
                    "method": "closed_form", "error_bound": 0.0})
    if a_text is not None:
        for pv in _parse_a_powers(a_text):
            out.append({"name": "A", "powers": list(pv),
                        "value": float(bsm_constant_A(pv)),
                        "method": "closed_form", "error_bound": 0.0})
    if want_beta:
        if "alpha" not in kv or "powers" not in kv:
            raise ValidationError("--beta needs alpha=VALUE and powers=...")
        alpha = float(kv["alpha"])
        fams = _parse_powers(kv["powers"])
        mat = beta_matrix(fams, alpha)
        out.append({"name": "beta", "alpha": alpha,
                    "powers": [list(pv) for pv in fams],
                    "entries": mat.entries, "tail_bound": mat.tail_bound,
                    "methods": mat.methods, "truncation_lag": mat.lag})
    doc = {"constants": out}
    if as_json:
        _emit_json(doc)
        return
    for item in out:
        if item["name"] == "psi":
            click.echo(f"psi({item['argument']:g}) = {item['value']:.6f} "
                       f"[{item['method']}]")
        elif item["name"] == "rho":
            vals = ", ".join(f"{v:.6f}" for v in item["values"][1:])
            click.echo(f"rho(1..{item['jmax']}; alpha={item['alpha']:g}) "
                       f"= {vals} [{item['method']}]")
        elif item["name"] == "A":
            pw = ",".join(f"{p:g}" for p in item["powers"])
            click.echo(f"A({pw}) = {item['value']:.6f} [{item['method']}]")
        else:
            click.echo(f"beta(alpha={item['alpha']:g}) for "
                       + " ; ".join(",".join(f"{p:g}" for p in pv)
                                    for pv in item["powers"]))
            ent = np.asarray(item["entries"], dtype=float)
            bnd = np.asarray(item["tail_bound"], dtype=float)
            for i in range(ent.shape[0]):
                row = "  ".join(f"{v:.6f}" for v in ent[i])
                click.echo(f"  [{row}]  max err {bnd[i].max():.2e}")


# ---------------------------------------------------------------------------
# experiment

def _bundled_config_names():
    root = importlib.resources.files("bssmpv") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def _resolve_config(token):
    if os.path.exists(token):
        with open(token, "r", encoding="utf-8") as fh:
            return fh.read(), token
    name = token if token.endswith(".cfg") else token + ".cfg"
    res = importlib.resources.files("bssmpv") / "configs" / name
    if res.is_file():
        return res.read_text(encoding="utf-8"), f"bundled:{name}"
    raise ValidationError(
        f"no config file or bundled config named {token!r}; bundled "
        f"configs: {', '.join(_bundled_config_names())}")


@main.command()
@click.argument("config")
@click.option("--out-json", "out_json",
              type=click.Path(dir_okay=False, writable=True), default=None,
              help="Write the report JSON here.")
@click.option("--out-csv", "out_csv",
              type=click.Path(dir_okay=False, writable=True), default=None,
              help="Write the report summary CSV here.")
@click.option("--json", "as_json", is_flag=True,
              help="Print the report JSON on stdout.")
@_guarded
def experiment(config, out_json, out_csv, as_json):
    """Run an experiment from a config file or a bundled config name."""
    text, origin = _resolve_config(config)
    cfg = load_config(text)
    if out_json or out_csv:
        cfg = dataclasses.replace(cfg, out_json=out_json or cfg.out_json,
                                  out_csv=out_csv or cfg.out_csv)
    _log_config({"command": "experiment", "config": origin,
                 "kind": cfg.kind, "seed": cfg.seed,
                 "n_list": list(cfg.n_list),
                 "replications": cfg.replications,
                 "out_json": cfg.out_json, "out_csv": cfg.out_csv})
    report = run_experiment(cfg)
    if as_json:
        click.echo(report.to_json(), nl=False)
    else:
        click.echo(f"experiment kind={report.kind} ({origin})")
        for v in report.verdicts:
            mark = "PASS" if v["passed"] else "FAIL"
            click.echo(f"  {mark} {v['rule']} {v['statistic']}: "
                       f"observed {v['observed']:.6g} vs "
                       f"threshold {v['threshold']:g}")
        for path in (cfg.out_json, cfg.out_csv):
            if path:
                click.echo(f"  -> {path}")
    if not report.passed:
        raise VerdictFailure(
            "failed verdicts: " + ", ".join(
                v["rule"] for v in report.verdicts if not v["passed"]))


# ---------------------------------------------------------------------------
# conditions

@main.command()
@click.option("--kernel", "kernel_spec", required=True,
              help="Kernel flag, e.g. powerlaw:delta=-0.3.")
@click.option("--powers", "powers_text", required=True,
              help="Power vectors, e.g. \"2\" or \"0.75,0.75\".")
@click.option("--gamma", "gamma_vol", type=float, default=1.0,
              show_default=True, help="Volatility smoothness index.")
@click.option("--json", "as_json", is_flag=True)
@_guarded
def conditions(kernel_spec, powers_text, gamma_vol, as_json):
    """Report which asymptotic regimes hold for a kernel and power set."""
    kernel = _kernel_from_flag(kernel_spec)
    pvs = _parse_powers(powers_text)
    _log_config({"command": "conditions", "kernel": kernel_spec,
                 "powers": powers_text, "gamma": gamma_vol})
    rep = check_conditions(kernel, pvs, gamma_vol=gamma_vol)
    doc = {"lln_ok": rep.lln_ok, "clt_ok": rep.clt_ok,
           "alpha": rep.alpha, "p_min": rep.p_min,
           "required_gamma": rep.required_gamma,
           "delta_bounds": list(rep.delta_bounds)
           if rep.delta_bounds is not None else None,
           "inconclusive": rep.inconclusive,
           "alpha_se": rep.alpha_se,
           "notes": list(rep.notes)}
    if as_json:
        _emit_json(doc)
        return
    click.echo(f"law of large numbers: {'ok' if rep.lln_ok else 'NOT ok'}")
    click.echo(f"central limit theory: {'ok' if rep.clt_ok else 'NOT ok'}"
               + (" (inconclusive fit)" if rep.inconclusive else ""))
    if rep.alpha is not None:
        se = f" (se {rep.alpha_se:.3f})" if rep.alpha_se else ""
        click.echo(f"local exponent alpha = {rep.alpha:g}{se}")
    click.echo(f"smallest positive power = {rep.p_min:g}")
    if rep.required_gamma is not None:
        click.echo(f"required volatility smoothness > {rep.required_gamma:g}")
    for note in rep.notes:
        click.echo(f"note: {note}")


if __name__ == "__main__":
    main()
