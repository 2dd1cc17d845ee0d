"""Command-line entry point: ``mixhazard <simulate|estimate|identify|calibrate|balance>``.

Runs are configured by an INI file whose sections mirror the modules
(``[run]``, ``[data]``, ``[simulate]``, ``[dgp]``, ``[binning]``, ``[search]``,
``[notices]``, ``[estimate]``, ``[identify]``, ``[calibrate]``).  Flags override
the ``[run]`` section.  Every run writes ``manifest.json`` echoing the fully
resolved configuration and hashes of inputs and outputs.

Exit codes: 0 success, 2 usage or schema error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import re
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from mixhazard import __version__
from mixhazard.core import LogLogistic, TypeDistribution, empirical_exit_rates
from mixhazard.estimator import (
    EstimationError,
    GeneralizedSpec,
    GmmSpec,
    RelevanceError,
    closed_form_identify,
    generalized_identify,
    gmm_estimate,
    grid_values,
    residual_grid,
)
from mixhazard.io import SchemaError, read_spells, read_table, write_rows, write_spells, write_table
from mixhazard.propensity import (
    CovariateSpec,
    SeparationError,
    balance_report,
    fit_propensity,
    ipw_weights,
    trim_by_score,
)
from mixhazard.search import (
    NoticeSpec,
    SearchConfig,
    SearchConvergenceError,
    calibrate,
    panel_config,
    simulate_panel,
)
from mixhazard.simlab import Dgp, apply_censoring, make_binning_dgp, simulate

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


class UsageError(ValueError):
    """Invalid configuration or arguments."""


class FitFailure(RuntimeError):
    """A fit finished but missed its tolerance; the report is still written."""


DEFAULTS = {
    "run": {"seed": "0", "dbar": "4", "threads": "1", "out": "out"},
    "data": {"input": "", "table": "", "notices": "", "bin_weeks": ""},
    "simulate": {"source": "dgp", "n": "3000", "censoring": "none", "replication": "0"},
    "dgp": {
        "psi1": "0.1, 0.2", "tail": "0.15, 0.25, 0.2", "loglogistic": "", "type_points": "0.4, 1.0, 1.6",
        "type_weights": "0.25, 0.5, 0.25", "shares": "", "labels": "", "gamma": "", "type_shift": "",
        "x_prob": "", "x_effect": "1.0", "assignment": "",
    },
    "binning": {"case": "3", "form": "geometric"},
    "search": {
        "beta": "0.985", "sigma": "1.75", "wage": "1.0", "annuity": "0.1", "benefit": "0.5", "D_B": "3",
        "D_T": "4", "rho": "1.0", "theta": "50.0", "delta": "1, 1, 1, 1", "delta_T": "", "types": "1.0:1.0",
    },
    "notices": {"labels": "S, L", "delta1": "1.0, 1.25", "shares": "0.5, 0.5"},
    "estimate": {"tail": "nonparametric", "two_step": "true", "numeric": "", "categorical": "", "trim": "",
                 "pair": "0, 1"},
    "identify": {"method": "closed-form", "kappa1": "0", "gamma": "1", "exercise": "1", "tail": "log-logistic",
                 "kappa_grid": "[-0.1, 0.1] step 0.01", "gamma_grid": "[0.9, 1.1] step 0.01"},
    "calibrate": {"mode": "two-type", "structural": "", "observed": "", "results": "", "tolerance": "1e-6",
                  "weight_structural": "1", "weight_observed": "1", "restarts": "5"},
}

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_GRID = re.compile(rf"^\s*\[\s*({_NUM})\s*,\s*({_NUM})\s*\]\s*step\s*({_NUM})\s*$")


def parse_grid(text: str) -> np.ndarray:
    """``"[lo, hi] step s"`` to the grid ``lo, lo + s, ..., hi``."""
    m = _GRID.match(text)
    if not m:
        raise UsageError(f"grid spec must look like '[-0.1, 0.1] step 0.01', got {text!r}")
    lo, hi, step = map(float, m.groups())
    if step <= 0 or hi < lo:
        raise UsageError(f"grid spec needs step > 0 and hi >= lo, got {text!r}")
    return grid_values(lo, hi, step)


def _floats(text: str, key: str) -> tuple:
    if not text.strip():
        return ()
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _pairs(text: str, key: str) -> tuple:
    out = []
    for item in _names(text):
        try:
            a, b = item.split(":")
            out.append((float(a), float(b)))
        except ValueError:
            raise UsageError(f"{key}: expected 'a:b' pairs, got {item!r}") from None
    return tuple(out)


class RunConfig:
    """Defaults, then the config file, then command-line overrides."""

    def __init__(self, command: str, path: str | None = None, overrides: dict | None = None):
        self.command = command
        self.parser = configparser.ConfigParser(interpolation=None)
        self.parser.optionxform = str
        self.parser.read_dict(DEFAULTS)
        self.file_sections: set = set()
        if path:
            probe = configparser.ConfigParser(interpolation=None)
            probe.optionxform = str
            try:
                if not probe.read(path):
                    raise UsageError(f"cannot read config file {path!r}")
            except configparser.Error as exc:
                raise UsageError(f"malformed config file: {exc}") from None
            for sec in probe.sections():
                if sec not in DEFAULTS:
                    raise UsageError(f"unknown config section [{sec}]")
                for k, v in probe[sec].items():
                    if k not in DEFAULTS[sec]:
                        raise UsageError(f"unknown key {k!r} in section [{sec}]")
                    self.parser[sec][k] = v
                self.file_sections.add(sec)
        for (sec, key), v in (overrides or {}).items():
            if v is not None:
                self.parser[sec][key] = str(v)

    def get(self, sec: str, key: str) -> str:
        return self.parser[sec][key].strip()

    def int(self, sec: str, key: str) -> int:
        try:
            return int(self.get(sec, key))
        except ValueError:
            raise UsageError(f"[{sec}] {key} must be an integer") from None

    def float(self, sec: str, key: str) -> float:
        try:
            return float(self.get(sec, key))
        except ValueError:
            raise UsageError(f"[{sec}] {key} must be a number") from None

    def bool(self, sec: str, key: str) -> bool:
        try:
            return self.parser.getboolean(sec, key)
        except ValueError:
            raise UsageError(f"[{sec}] {key} must be true or false") from None

    def floats(self, sec: str, key: str) -> tuple:
        return _floats(self.get(sec, key), f"[{sec}] {key}")

    def resolved(self) -> dict:
        return {sec: dict(self.parser[sec]) for sec in self.parser.sections()}

    @property
    def out(self) -> Path:
        return Path(self.get("run", "out"))


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_dgp(cfg: RunConfig) -> Dgp:
    psi1 = cfg.floats("dgp", "psi1")
    points, weights = cfg.floats("dgp", "type_points"), cfg.floats("dgp", "type_weights")
    ll = cfg.floats("dgp", "loglogistic")
    try:
        types = TypeDistribution.discrete(points, weights)
        if ll:
            if len(ll) != 2:
                raise UsageError("[dgp] loglogistic needs 'alpha1, alpha2'")
            tail, Dbar = LogLogistic(*ll), cfg.int("run", "dbar")
        else:
            tail = cfg.floats("dgp", "tail")
            Dbar = len(tail) + 1
        gamma = cfg.floats("dgp", "gamma")
        shift = cfg.floats("dgp", "type_shift")
        x_prob = cfg.get("dgp", "x_prob")
        return Dgp(
            psi1=psi1, tail=tail, types=types, Dbar=Dbar,
            shares=cfg.floats("dgp", "shares") or None,
            notice_labels=_names(cfg.get("dgp", "labels")) or None,
            gamma=gamma or None,
            type_shift=shift or None,
            x_prob=float(x_prob) if x_prob else None,
            x_effect=cfg.float("dgp", "x_effect"),
            assignment=_pairs(cfg.get("dgp", "assignment"), "[dgp] assignment") or None,
        )
    except UsageError:
        raise
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid DGP: {exc}") from None


def build_search(cfg: RunConfig) -> SearchConfig:
    s = "search"
    try:
        dT = cfg.get(s, "delta_T")
        return SearchConfig(
            beta=cfg.float(s, "beta"), sigma=cfg.float(s, "sigma"), wage=cfg.float(s, "wage"),
            annuity=cfg.float(s, "annuity"), benefit=cfg.float(s, "benefit"), D_B=cfg.int(s, "D_B"),
            D_T=cfg.int(s, "D_T"), rho=cfg.float(s, "rho"), theta=cfg.float(s, "theta"),
            delta=cfg.floats(s, "delta"), delta_T=float(dT) if dT else None,
            types=_pairs(cfg.get(s, "types"), "[search] types"),
        )
    except UsageError:
        raise
    except ValueError as exc:
        raise UsageError(f"invalid search configuration: {exc}") from None


def build_notices(cfg: RunConfig) -> NoticeSpec:
    try:
        return NoticeSpec(labels=_names(cfg.get("notices", "labels")), delta1=cfg.floats("notices", "delta1"),
                          shares=cfg.floats("notices", "shares"))
    except ValueError as exc:
        raise UsageError(f"invalid notice specification: {exc}") from None


def covariate_spec(cfg: RunConfig) -> CovariateSpec:
    return CovariateSpec(numeric=_names(cfg.get("estimate", "numeric")),
                         categorical=_names(cfg.get("estimate", "categorical")))


def load_spells(cfg: RunConfig):
    path = cfg.get("data", "input")
    if not path:
        raise UsageError("no input file: set [data] input or pass --input")
    bw = cfg.get("data", "bin_weeks")
    labels = _names(cfg.get("data", "notices")) or None
    data = read_spells(path, labels, int(bw) if bw else None)
    for c in covariate_spec(cfg).numeric + covariate_spec(cfg).categorical:
        if c not in data.covariate_names:
            raise SchemaError("configured covariate has no column in the input", row=1, column=f"x_{c}")
    return data


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(obj, path: Path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def write_manifest(cfg: RunConfig, outputs: list, extra: dict | None = None):
    inputs = {}
    for key in ("input", "table"):
        p = cfg.get("data", key)
        if p and Path(p).exists():
            inputs[p] = _sha256(Path(p))
    if cfg.command == "calibrate" and cfg.get("calibrate", "results"):
        p = cfg.get("calibrate", "results")
        inputs[p] = _sha256(Path(p))
    manifest = {
        "command": cfg.command,
        "version": __version__,
        "config": cfg.resolved(),
        "inputs": inputs,
        "outputs": {Path(p).name: _sha256(Path(p)) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    _write_json(_clean(manifest), cfg.out / "manifest.json")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig) -> int:
    n = cfg.int("simulate", "n")
    if n < 1:
        raise UsageError(f"[simulate] n must be at least 1, got {n}")
    seed = cfg.int("run", "seed")
    rep = cfg.int("simulate", "replication")
    source = cfg.get("simulate", "source")
    censoring = cfg.get("simulate", "censoring")
    if source == "dgp":
        dgp = build_dgp(cfg)
        data, Dbar = simulate(dgp, n, seed, rep), dgp.Dbar
    elif source == "binning":
        case = cfg.int("binning", "case")
        if case not in (1, 2, 3, 4):
            raise UsageError(f"[binning] case must be 1-4, got {case}")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            dgp = make_binning_dgp(case, cfg.get("binning", "form"))
        data, Dbar = simulate(dgp, n, seed, rep), dgp.Dbar
    elif source == "search-panel":
        if "search" in cfg.file_sections:
            search, notices = build_search(cfg), build_notices(cfg)
        else:
            search, notices = panel_config()
            if "notices" in cfg.file_sections:
                notices = build_notices(cfg)
        Dbar = cfg.int("run", "dbar")
        data = simulate_panel(search, notices, n, seed, Dbar, rep)
    else:
        raise UsageError(f"[simulate] source must be dgp, binning or search-panel, got {source!r}")
    try:
        if censoring != "none":
            data = apply_censoring(data, censoring, seed, Dbar)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "records.csv"
    write_spells(data, path)
    write_manifest(cfg, [path])
    return EXIT_OK


def _propensity(cfg: RunConfig, data):
    """Fit scores, optionally trim, and return ``(data, model, weights, n_trimmed)``."""
    spec = covariate_spec(cfg)
    model = fit_propensity(data, spec)
    trim = cfg.floats("estimate", "trim")
    dropped = 0
    if trim:
        if len(trim) != 2:
            raise UsageError("[estimate] trim needs 'lo, hi'")
        data, dropped = trim_by_score(data, model, *trim)
        model = fit_propensity(data, spec)
    return data, model, ipw_weights(model, data), dropped


def _gmm_spec(cfg: RunConfig, sec: str = "estimate") -> GmmSpec:
    tail = cfg.get(sec, "tail")
    if tail not in ("nonparametric", "log-logistic"):
        raise UsageError(f"[{sec}] tail must be nonparametric or log-logistic, got {tail!r}")
    pair = tuple(int(v) for v in cfg.floats("estimate", "pair"))
    return GmmSpec(tail=tail, Dbar=cfg.int("run", "dbar"), two_step=cfg.bool("estimate", "two_step"), pair=pair)


def cmd_estimate(cfg: RunConfig) -> int:
    data = load_spells(cfg)
    data, model, w, dropped = _propensity(cfg, data)
    spec = _gmm_spec(cfg)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        table = empirical_exit_rates(data, w, spec.Dbar)
        res = gmm_estimate(data, model, spec)
    cfg.out.mkdir(parents=True, exist_ok=True)
    out = res.to_dict()
    out["propensity"] = model.to_dict()
    out["trimmed"] = dropped
    out["warnings"] = sorted({str(c.message) for c in caught})
    paths = [cfg.out / "results.json", cfg.out / "hazards.csv", cfg.out / "exit_rates.csv", cfg.out / "balance.csv"]
    _write_json(_clean(out), paths[0])
    write_rows(res.hazard_rows(), paths[1])
    write_table(table, paths[2])
    balance_report(data, w, model.predict_proba(data)).to_csv(paths[3])
    write_manifest(cfg, paths)
    return EXIT_OK if res.converged else EXIT_NUMERICAL


def _identify_table(cfg: RunConfig):
    if cfg.get("data", "table"):
        return read_table(cfg.get("data", "table"), _names(cfg.get("data", "notices")) or None), None
    data = load_spells(cfg)
    data, model, w, _ = _propensity(cfg, data)
    return empirical_exit_rates(data, w, cfg.int("run", "dbar")), (data, model)


def _params_dict(params) -> dict:
    return {
        "notice_labels": list(params.notice_labels),
        "psi": {lab: params.psi_path(l).tolist() for l, lab in enumerate(params.notice_labels)},
        "moments": params.moments.tolist(),
        "kappa": None if params.kappa is None else params.kappa.tolist(),
        "gamma": None if params.gamma is None else params.gamma.tolist(),
    }


def cmd_identify(cfg: RunConfig) -> int:
    method = cfg.get("identify", "method")
    Dbar = cfg.int("run", "dbar")
    cfg.out.mkdir(parents=True, exist_ok=True)
    outputs = []
    if method in ("closed-form", "generalized"):
        table, _ = _identify_table(cfg)
        if table.Dbar < Dbar:
            raise UsageError(f"table has {table.Dbar} periods, fewer than dbar={Dbar}")
        if method == "closed-form":
            pair = tuple(int(v) for v in cfg.floats("estimate", "pair"))
            params = closed_form_identify(table, Dbar, pair)
            label = {"kappa1": 0.0, "gamma": 1.0}
        else:
            g = GeneralizedSpec.joint(cfg.float("identify", "kappa1"), cfg.float("identify", "gamma"))
            params = generalized_identify(table, g, Dbar)
            label = g.label()
        out = {"method": method, **label, "parameters": _params_dict(params)}
        outputs.append(cfg.out / "identify.json")
        _write_json(_clean(out), outputs[-1])
    elif method == "grid":
        if cfg.get("data", "table"):
            raise UsageError("residual grids need individual records ([data] input), not a table")
        exercise = cfg.int("identify", "exercise")
        kap = parse_grid(cfg.get("identify", "kappa_grid"))
        gam = parse_grid(cfg.get("identify", "gamma_grid"))
        if exercise == 1:
            grid = [GeneralizedSpec.mean_shift(k) for k in kap]
        elif exercise == 2:
            grid = [GeneralizedSpec.hazard_ratio(g) for g in gam]
        elif exercise == 3:
            grid = [GeneralizedSpec.joint(k, g) for k in kap for g in gam]
        else:
            raise UsageError(f"[identify] exercise must be 1, 2 or 3, got {exercise}")
        data = load_spells(cfg)
        data, model, _, _ = _propensity(cfg, data)
        spec = replace(_gmm_spec(cfg, "identify"), two_step=False)
        res = residual_grid(data, model, grid, spec, threads=cfg.int("run", "threads"))
        rows = res.rows()
        outputs.append(cfg.out / "grid.csv")
        write_rows(rows, outputs[-1], list(rows[0]) if rows else None)
        best = res.argmin if res.valid else None
        summary = {"method": "grid", "exercise": exercise, "points": len(rows), "failed": len(rows) - len(res.valid),
                   "argmin": None if best is None else {k: best[k] for k in ("kappa1", "gamma", "objective")}}
        outputs.append(cfg.out / "identify.json")
        _write_json(_clean(summary), outputs[-1])
    else:
        raise UsageError(f"[identify] method must be closed-form, generalized or grid, got {method!r}")
    write_manifest(cfg, outputs)
    return EXIT_OK


def _targets(cfg: RunConfig, T: int) -> dict:
    targets = {}
    res_path = cfg.get("calibrate", "results")
    if res_path:
        try:
            with open(res_path) as fh:
                res = json.load(fh)
            ref = res["propensity"]["reference"] if "propensity" in res else None
            rows = res["implied_hazards"]
            lab = ref or next(r["notice"] for r in rows if r["notice"] is not None)
            targets["structural"] = [next(r["psi"] for r in rows if r["d"] == d and r["notice"] in (lab, None))
                                     for d in range(1, len(res["moments"]) + 1)]
            targets["observed"] = res["observed_hazard"][lab]
        except (OSError, KeyError, StopIteration, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read targets from {res_path!r}: {exc}") from None
    for key in ("structural", "observed"):
        vals = cfg.floats("calibrate", key)
        if vals:
            targets[key] = list(vals)
    if not targets:
        raise UsageError("no calibration targets: set [calibrate] structural/observed or results")
    for key, v in targets.items():
        if len(v) != T:
            raise UsageError(f"target path {key!r} has length {len(v)}, expected D_T = dbar = {T}")
        if any(x is None or not 0 < x < 1 for x in v):
            raise UsageError(f"target path {key!r} must lie in (0, 1)")
    return targets


def cmd_calibrate(cfg: RunConfig) -> int:
    template = build_search(cfg)
    T = template.D_T
    if cfg.int("run", "dbar") != T:
        raise UsageError(f"dbar={cfg.int('run', 'dbar')} must equal [search] D_T={T}")
    targets = _targets(cfg, T)
    mode = cfg.get("calibrate", "mode")
    if mode not in ("single-type", "two-type"):
        raise UsageError(f"[calibrate] mode must be single-type or two-type, got {mode!r}")
    weights = {"structural": cfg.float("calibrate", "weight_structural"),
               "observed": cfg.float("calibrate", "weight_observed")}
    tol = cfg.float("calibrate", "tolerance")
    restarts = cfg.int("calibrate", "restarts")
    seed = cfg.int("run", "seed")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        main_fit = calibrate(template, targets, mode, weights, tol, restarts, seed)
        fits = {mode: main_fit}
        if mode == "two-type":
            # homogeneous comparison fitted to the exit rates a researcher would see
            key = "observed" if "observed" in targets else "structural"
            fits["single-type"] = calibrate(template, {key: targets[key]}, "single-type", weights, tol, restarts, seed)
    rows = []
    for d in range(T):
        row = {"d": d + 1}
        for key in ("structural", "observed"):
            row[f"target_{key}"] = targets[key][d] if key in targets else None
        for tag, fit in fits.items():
            suffix = "" if tag == mode else "_single"
            row[f"model_structural{suffix}"] = float(fit.paths["structural"][d])
            row[f"model_observed{suffix}"] = float(fit.paths["observed"][d])
            row[f"average_type{suffix}"] = float(fit.paths["average_type"][d])
            row[f"offer_arrival{suffix}"] = float(fit.paths["delta"][d])
            row[f"average_effort{suffix}"] = float(fit.paths["average_effort"][d])
        rows.append(row)
    cfg.out.mkdir(parents=True, exist_ok=True)
    paths = [cfg.out / "calibration.json", cfg.out / "calibration.csv"]
    report = {tag: fit.to_dict() for tag, fit in fits.items()}
    report["targets"] = targets
    _write_json(_clean(report), paths[0])
    write_rows(rows, paths[1])
    write_manifest(cfg, paths)
    if not main_fit.success:
        raise FitFailure(f"calibration residual norm {main_fit.residual_norm:.3e} exceeds tolerance {tol:.1e}")
    return EXIT_OK


def cmd_balance(cfg: RunConfig) -> int:
    data = load_spells(cfg)
    data, model, w, dropped = _propensity(cfg, data)
    report = balance_report(data, w, model.predict_proba(data))
    cfg.out.mkdir(parents=True, exist_ok=True)
    paths = [cfg.out / "balance.csv", cfg.out / "balance.json"]
    report.to_csv(paths[0])
    _write_json(_clean({"rows": report.rows, "overlap": report.overlap, "propensity": model.to_dict(),
                        "trimmed": dropped}), paths[1])
    write_manifest(cfg, paths)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "identify": cmd_identify,
    "calibrate": cmd_calibrate,
    "balance": cmd_balance,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixhazard", description="Mixed hazard estimation toolkit")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="base seed (non-negative)")
        p.add_argument("--dbar", type=int, help="number of duration periods")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads for grids")
        p.add_argument("--input", help="spell CSV (overrides [data] input)")
        p.add_argument("--bin-weeks", type=int, nargs="?", const=12, default=None,
                       help="input durations are weeks; bin by ceiling division (default width 12)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and args.seed < 0:
            raise UsageError("--seed must be non-negative")
        if args.dbar is not None and args.dbar < 1:
            raise UsageError("--dbar must be positive")
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be positive")
        overrides = {("run", "seed"): args.seed, ("run", "dbar"): args.dbar, ("run", "out"): args.out,
                     ("run", "threads"): args.threads, ("data", "input"): args.input,
                     ("data", "bin_weeks"): args.bin_weeks}
        cfg = RunConfig(args.command, args.config, overrides)
        if cfg.int("run", "dbar") < 1 or cfg.int("run", "seed") < 0:
            raise UsageError("[run] dbar must be positive and seed non-negative")
        return COMMANDS[args.command](cfg)
    except (RelevanceError, EstimationError, SeparationError, SearchConvergenceError, FitFailure,
            np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"mixhazard: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, SchemaError, FileNotFoundError, ValueError) as exc:
        print(f"mixhazard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
