"""Declarative experiments: configuration, the replication loop and report files.

A configuration is a YAML (or JSON) document validated against
:data:`CONFIG_SCHEMA`.  ``run_experiment`` writes

* ``report.json``       rejection rates, confidence intervals, condition checks (deterministic)
* ``replications.csv``  one row per (scenario, replication, statistic, eps)
* ``runtime.json``      wall-clock and backend information (not deterministic)
* ``paths/<scenario>.bin``  the first replication's path of each scenario
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml
from scipy.stats import binomtest

from . import _backend
from .calibrate import (
    DEFAULT_N_PATHS,
    DEFAULT_TIME_STEP,
    DEFAULT_TRUNCATION,
    CriticalValueTable,
    calibrate,
    default_table_dir,
    load_samples,
    load_table,
    save_table,
    table_filename,
)
from .composite import ParametricModel, corrected_cvm, mle_fit, plugin_cvm, shift_corrected_cvm
from .errors import BlowupError, ConfigError, DiffGofError, MissingInputs, NumericalFailure
from .estimate import empirical_curves
from .law import InvariantLaw, build_law, condition_integrals, distance_norms
from .model import DiffusionModel, DriftSpec, check_conditions
from .simulate import RngStream, SamplePath, dump_path, load_path, simulate_path
from .stats import STAT_TABLES, STATISTICS, compute, decide

log = logging.getLogger(__name__)

FAILURE_LIMIT = 0.01
SCENARIO_STRIDE = 10_000_000
COMPOSITE_STATISTICS = {"corrected_cvm": "int_exp", "plugin_cvm": "int_exp", "shift_cvm": "int_exp"}
ALL_TABLES = {**STAT_TABLES, **COMPOSITE_STATISTICS}

_MODEL = {
    "type": "object",
    "required": ["drift"],
    "properties": {
        "label": {"type": "string"},
        "drift": {"type": "object", "required": ["family"]},
        "diffusion": {"type": "object", "required": ["family"]},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "diffgof experiment configuration",
    "type": "object",
    "required": ["seed", "hypothesis"],
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 18446744073709551615},
        "output": {"type": "string"},
        "threads": {"type": "integer", "minimum": 1},
        "hypothesis": _MODEL,
        "alternatives": {"type": "array", "items": _MODEL},
        "include_null": {"type": "boolean"},
        "statistics": {
            "type": "array",
            "items": {"enum": sorted(ALL_TABLES)},
            "minItems": 1,
            "uniqueItems": True,
        },
        "T": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "replications": {"type": "integer", "minimum": 0},
        "epsilons": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                     "minItems": 1},
        "tables": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "paths": {"type": "object", "additionalProperties": {"type": "string"}},
                "calibrate": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_paths": {"type": "integer", "minimum": 1},
                        "time_step": {"type": "number", "exclusiveMinimum": 0},
                        "truncation_v": {"type": "number", "exclusiveMinimum": 0},
                        "seed": {"type": "integer", "minimum": 0},
                    },
                },
            },
        },
        "oscillation": {
            "type": "object",
            "required": ["alpha", "n"],
            "additionalProperties": False,
            "properties": {
                "alpha": {"type": "number"},
                "n": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
            },
        },
        "composite": {
            "type": "object",
            "required": ["family"],
            "additionalProperties": False,
            "properties": {
                "family": {"enum": ["ou_rate", "switching_shift"]},
                "fixed": {"type": "number"},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
                "bounds": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "path": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "file": {"type": "string"},
                "simulate": {"type": "string"},
                "stream": {"type": "integer", "minimum": 0},
            },
        },
    },
}

EXECUTION_KEYS = ("threads", "output")

DEFAULTS = {
    "threads": 1,
    "alternatives": [],
    "include_null": True,
    "statistics": ["cvm_lte", "cvm_edf", "ks_lte", "nn"],
    "T": 1000.0,
    "dt": 0.01,
    "replications": 100,
    "epsilons": [0.05],
    "tables": {},
    "output": "diffgof_out",
}


@dataclass
class ExperimentConfig:
    seed: int
    hypothesis: DiffusionModel
    alternatives: list = field(default_factory=list)
    include_null: bool = True
    statistics: list = field(default_factory=list)
    T: float = 1000.0
    dt: float = 0.01
    replications: int = 100
    epsilons: list = field(default_factory=lambda: [0.05])
    tables: dict = field(default_factory=dict)
    output: str = "diffgof_out"
    threads: int = 1
    oscillation: dict | None = None
    composite: dict | None = None
    path: dict | None = None
    raw: dict = field(default_factory=dict)

    @property
    def scientific(self) -> dict:
        """The configuration minus execution-only keys (threads, output), which never change results."""
        return {k: v for k, v in self.raw.items() if k not in EXECUTION_KEYS}

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.scientific, sort_keys=True).encode()).hexdigest()[:16]


def validate_config(data: Any) -> dict:
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {exc.message}") from None
    return data


def parse_config(data: dict, **overrides) -> ExperimentConfig:
    data = validate_config(dict(data))
    for k, v in overrides.items():
        if v is not None:
            data[k] = v
    merged = {**DEFAULTS, **data}
    merged["tables"] = dict(merged.get("tables") or {})
    hyp = DiffusionModel.from_dict(merged["hypothesis"])
    alts = [DiffusionModel.from_dict(a) for a in merged["alternatives"]]
    labels = [a.label for a in alts]
    if any(not lab for lab in labels) or len(set(labels)) != len(labels):
        raise ConfigError("alternatives need unique, non-empty labels")
    comp = merged.get("composite")
    stats = list(merged["statistics"])
    if any(s in COMPOSITE_STATISTICS for s in stats) and not comp:
        raise ConfigError("composite statistics need a 'composite' section")
    if comp and comp["family"] == "switching_shift" and "corrected_cvm" in stats:
        raise ConfigError("corrected_cvm is refused for switching_shift (the median depends on theta); use shift_cvm")
    return ExperimentConfig(
        seed=int(merged["seed"]),
        hypothesis=hyp,
        alternatives=alts,
        include_null=bool(merged["include_null"]),
        statistics=stats,
        T=float(merged["T"]),
        dt=float(merged["dt"]),
        replications=int(merged["replications"]),
        epsilons=[float(e) for e in merged["epsilons"]],
        tables=merged["tables"],
        output=str(merged["output"]),
        threads=int(merged["threads"]),
        oscillation=merged.get("oscillation"),
        composite=comp,
        path=merged.get("path"),
        raw=merged,
    )


def load_config(file, **overrides) -> ExperimentConfig:
    try:
        text = Path(file).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {file}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {file} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    return parse_config(data, **overrides)


def pmodel_from(comp: dict, hyp: DiffusionModel) -> ParametricModel:
    sigma = comp.get("sigma")
    if sigma is None:
        if hyp.diffusion.family != "constant":
            raise ConfigError("composite families need a constant diffusion")
        sigma = hyp.diffusion.sigma
    if comp["family"] == "ou_rate":
        bounds = comp.get("bounds", (0.05, 10.0))
        return ParametricModel.ou_rate(comp.get("fixed", 0.0), sigma, tuple(bounds))
    bounds = comp.get("bounds", (-5.0, 5.0))
    return ParametricModel.switching_shift(comp.get("fixed", 1.0), sigma, tuple(bounds))


# ---------------------------------------------------------------------------
# tables


def resolve_tables(cfg: ExperimentConfig, functional_ids) -> dict[str, tuple[CriticalValueTable, Path]]:
    """Load the tables needed; calibrate missing ones if the config declares a calibrate step."""
    tcfg = cfg.tables
    tdir = Path(tcfg["dir"]) if "dir" in tcfg else default_table_dir()
    out = {}
    for fid in sorted(set(functional_ids)):
        path = Path(tcfg.get("paths", {}).get(fid, tdir / table_filename(fid)))
        if not path.exists():
            cal = tcfg.get("calibrate")
            if cal is None:
                raise ConfigError(
                    f"table {path} is missing; run 'diffgof calibrate --functional {fid}' or declare tables.calibrate"
                )
            table, samples = calibrate(
                fid,
                n_paths=cal.get("n_paths", DEFAULT_N_PATHS),
                time_step=cal.get("time_step", DEFAULT_TIME_STEP),
                truncation_v=cal.get("truncation_v", DEFAULT_TRUNCATION),
                seed=cal.get("seed", cfg.seed),
                threads=cfg.threads,
            )
            save_table(table, path, samples)
        out[fid] = (load_table(path), path)
    return out


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    name: str
    truth: DiffusionModel
    kind: str  # null | alternative | oscillation
    n: float | None = None


def scenarios(cfg: ExperimentConfig) -> list[Scenario]:
    out = []
    if cfg.include_null:
        out.append(Scenario("null", cfg.hypothesis, "null"))
    for alt in cfg.alternatives:
        out.append(Scenario(alt.label, alt, "alternative"))
    if cfg.oscillation:
        alpha = float(cfg.oscillation["alpha"])
        for n in cfg.oscillation["n"]:
            drift = DriftSpec.oscillating(cfg.hypothesis.drift, alpha, float(n))
            model = DiffusionModel(drift, cfg.hypothesis.diffusion, f"oscillating(alpha={alpha:g},n={n:g})")
            out.append(Scenario(f"osc_n{n:g}", model, "oscillation", float(n)))
    return out


def _stream(cfg: ExperimentConfig, s_idx: int, rep: int) -> RngStream:
    return RngStream(cfg.seed, s_idx * SCENARIO_STRIDE + rep)


def evaluate_statistics(path: SamplePath, cfg: ExperimentConfig, law0: InvariantLaw, pmodel: ParametricModel | None):
    """Statistic values for one path; composite fits are returned alongside."""
    values: dict[str, float] = {}
    fit_row: dict = {}
    fit = None
    for name in cfg.statistics:
        if name in STATISTICS:
            values[name] = compute(name, path, cfg.hypothesis, law0)
            continue
        if fit is None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                fit = mle_fit(path, pmodel)
            fit_row = fit.to_row()
        if name == "corrected_cvm":
            values[name] = corrected_cvm(path, pmodel, fit)
        elif name == "plugin_cvm":
            values[name] = plugin_cvm(path, pmodel, fit)
        else:
            values[name] = shift_corrected_cvm(path, pmodel, fit)
    return values, fit_row


def run_scenario(cfg: ExperimentConfig, s_idx: int, sc: Scenario, law0: InvariantLaw, tables, pmodel, out_dir: Path | None):
    truth_law = law0 if sc.truth == cfg.hypothesis else build_law(sc.truth)

    def one(rep: int):
        try:
            path = simulate_path(sc.truth, truth_law, cfg.T, cfg.dt, _stream(cfg, s_idx, rep))
            values, fit_row = evaluate_statistics(path, cfg, law0, pmodel)
        except (BlowupError, NumericalFailure) as exc:
            return rep, None, None, f"{type(exc).__name__}: {exc}", None
        return rep, values, fit_row, None, path if rep == 0 else None

    reps = range(cfg.replications)
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(one, reps))
    else:
        results = [one(r) for r in reps]
    failed = [{"replication": r, "error": err} for r, _, _, err, _ in results if err is not None]
    if cfg.replications and len(failed) > FAILURE_LIMIT * cfg.replications:
        raise NumericalFailure(
            f"scenario {sc.name}: {len(failed)} of {cfg.replications} replications failed (> {FAILURE_LIMIT:.0%}); "
            f"first: {failed[0]['error']}"
        )
    rows, fits = [], []
    for rep, values, fit_row, err, path in results:
        if err is not None:
            continue
        if path is not None and out_dir is not None:
            (out_dir / "paths").mkdir(parents=True, exist_ok=True)
            dump_path(path, out_dir / "paths" / f"{sc.name}.bin")
        if fit_row:
            fits.append({"scenario": sc.name, "replication": rep, **fit_row})
        for name, value in values.items():
            table, tpath = tables[ALL_TABLES[name]]
            for eps in cfg.epsilons:
                res = decide(name, value, table, eps)
                rows.append({
                    "scenario": sc.name,
                    "replication": rep,
                    "statistic": name,
                    "value": res.value,
                    "epsilon": eps,
                    "critical_value": res.critical_value,
                    "reject": int(res.reject),
                    "T": cfg.T,
                    "dt": cfg.dt,
                    "table": table.functional_id,
                })
    return rows, fits, failed


def _rates(rows: list[dict], statistics, epsilons) -> list[dict]:
    out = []
    for name in statistics:
        for eps in epsilons:
            sel = [r["reject"] for r in rows if r["statistic"] == name and r["epsilon"] == eps]
            n, k = len(sel), int(sum(sel))
            if n:
                ci = binomtest(k, n).proportion_ci(confidence_level=0.95, method="exact")
                lo, hi = float(ci.low), float(ci.high)
            else:
                lo, hi = 0.0, 1.0
            out.append({
                "statistic": name,
                "epsilon": eps,
                "rejected": k,
                "replications": n,
                "rejection_rate": (k / n) if n else None,
                "ci95": [lo, hi],
            })
    return out


ROW_FIELDS = ["scenario", "replication", "statistic", "value", "epsilon", "critical_value", "reject", "T", "dt", "table"]


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Run all scenarios, write the report files, return the report dict."""
    out = Path(out_dir or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    conditions = check_conditions(cfg.hypothesis)
    law0 = build_law(cfg.hypothesis)
    pmodel = pmodel_from(cfg.composite, cfg.hypothesis) if cfg.composite else None
    tables = resolve_tables(cfg, [ALL_TABLES[s] for s in cfg.statistics]) if cfg.replications else {}
    report: dict[str, Any] = {
        "config_hash": cfg.config_hash,
        "config": cfg.scientific,
        "hypothesis": cfg.hypothesis.to_dict(),
        "conditions": {
            "checks": conditions.to_dict(),
            "integrals": {k: v.to_dict() for k, v in condition_integrals(law0).items()},
        },
        "tables": {
            fid: {"file": str(p), "quantiles": {repr(k): v for k, v in t.quantiles.items()}, "n_paths": t.n_paths,
                  "master_seed": t.master_seed, "generator_version": t.generator_version}
            for fid, (t, p) in tables.items()
        },
        "scenarios": [],
    }
    runtime = {"backend": _backend.BACKEND, "threads": cfg.threads, "scenarios": {}}
    all_rows, all_fits = [], []
    for s_idx, sc in enumerate(scenarios(cfg)):
        t0 = time.perf_counter()
        rows, fits, failed = run_scenario(cfg, s_idx, sc, law0, tables, pmodel, out)
        runtime["scenarios"][sc.name] = time.perf_counter() - t0
        entry = {
            "name": sc.name,
            "kind": sc.kind,
            "truth": sc.truth.to_dict(),
            "replications_requested": cfg.replications,
            "replications_completed": cfg.replications - len(failed),
            "failed": failed,
            "results": _rates(rows, cfg.statistics, cfg.epsilons),
        }
        if sc.n is not None:
            entry["n"] = sc.n
        if sc.kind != "null":
            x = law0.x[law0.x < law0.mu]
            if np.max(np.abs(sc.truth.S(x) - cfg.hypothesis.S(x)), initial=0.0) > 1e-12:
                entry["flag"] = "double-sided alternative: limit law not ADF"
            try:
                entry["distance_norms"] = distance_norms(law0, build_law(sc.truth), cfg.hypothesis, sc.truth)
            except DiffGofError as exc:
                entry["distance_norms"] = {"error": str(exc)}
        report["scenarios"].append(entry)
        all_rows.extend(rows)
        all_fits.extend(fits)
    _write_csv(out / "replications.csv", ROW_FIELDS, all_rows)
    if all_fits:
        _write_csv(out / "fits.csv", list(all_fits[0]), all_fits)
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2, default=_json_default) + "\n")
    runtime["total_seconds"] = time.perf_counter() - t_start
    (out / "runtime.json").write_text(json.dumps(runtime, sort_keys=True, indent=2) + "\n")
    return report


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _write_csv(path: Path, fields, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


# ---------------------------------------------------------------------------
# single test


def run_single_test(cfg: ExperimentConfig, out_dir=None) -> list:
    """Test one path (from file or simulated) against the hypothesis."""
    check_conditions(cfg.hypothesis)  # refuses hypotheses failing ES/RP with QuadratureDivergence
    law0 = build_law(cfg.hypothesis)
    src = cfg.path or {"simulate": "null"}
    if "file" in src:
        path = load_path(src["file"])
    else:
        name = src.get("simulate", "null")
        truth = cfg.hypothesis if name in ("null", "hypothesis") else None
        for alt in cfg.alternatives:
            if alt.label == name:
                truth = alt
        if truth is None:
            raise ConfigError(f"path.simulate names unknown model {name!r}")
        law_t = law0 if truth == cfg.hypothesis else build_law(truth)
        path = simulate_path(truth, law_t, cfg.T, cfg.dt, RngStream(cfg.seed, src.get("stream", 0)))
    pmodel = pmodel_from(cfg.composite, cfg.hypothesis) if cfg.composite else None
    tables = resolve_tables(cfg, [ALL_TABLES[s] for s in cfg.statistics])
    values, _ = evaluate_statistics(path, cfg, law0, pmodel)
    results = []
    for name, value in values.items():
        table, tpath = tables[ALL_TABLES[name]]
        for eps in cfg.epsilons:
            results.append(decide(name, value, table, eps, T=path.T, dt=path.dt, model=cfg.hypothesis.label,
                                  table_id=table.functional_id))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [r.to_row() for r in results]
        if rows:
            _write_csv(out / "test_results.csv", list(rows[0]), rows)
    return results


# ---------------------------------------------------------------------------
# report: tidy plot data

POWER_ROW_SCHEMA = {
    "type": "object",
    "required": ["statistic", "epsilon", "n", "rejection_rate", "ci_low", "ci_high", "replications"],
    "properties": {
        "statistic": {"type": "string"},
        "epsilon": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "n": {"type": "number", "exclusiveMinimum": 0},
        "rejection_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "ci_low": {"type": "number", "minimum": 0, "maximum": 1},
        "ci_high": {"type": "number", "minimum": 0, "maximum": 1},
        "replications": {"type": "integer", "minimum": 1},
    },
}


def _read_rows(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def make_report(results_dir, out_dir=None, bins: int = 40) -> list[Path]:
    """Emit plot-ready CSV files from an experiment directory."""
    res = Path(results_dir)
    rep_file, rows_file = res / "report.json", res / "replications.csv"
    missing = [str(p) for p in (rep_file, rows_file) if not p.exists()]
    if missing:
        raise MissingInputs(f"experiment outputs missing: {', '.join(missing)}")
    report = json.loads(rep_file.read_text())
    rows = _read_rows(rows_file)
    out = Path(out_dir) if out_dir else res / "plots"
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    hyp = DiffusionModel.from_dict(report["hypothesis"])
    law0 = build_law(hyp)
    for sc in report["scenarios"]:
        pfile = res / "paths" / f"{sc['name']}.bin"
        if pfile.exists():
            target = out / f"curves_{sc['name']}.csv"
            empirical_curves(load_path(pfile), law0, hyp).to_csv(target)
            written.append(target)

    limit_cache: dict[str, np.ndarray | None] = {}
    for fid, info in report.get("tables", {}).items():
        try:
            tpath = Path(info["file"])
            limit_cache[fid] = load_samples(load_table(tpath), tpath)
        except (OSError, DiffGofError):
            limit_cache[fid] = None
    eps0 = min({float(r["epsilon"]) for r in rows}) if rows else None
    for sc in report["scenarios"]:
        for stat in sorted({r["statistic"] for r in rows if r["scenario"] == sc["name"]}):
            vals = np.array([float(r["value"]) for r in rows
                             if r["scenario"] == sc["name"] and r["statistic"] == stat and float(r["epsilon"]) == eps0])
            if vals.size == 0:
                continue
            fid = ALL_TABLES[stat]
            lim = limit_cache.get(fid)
            top = max(vals.max(), lim.max() if lim is not None else 0.0)
            edges = np.linspace(0.0, top * (1 + 1e-12), bins + 1)
            counts, _ = np.histogram(vals, edges)
            lcounts = np.histogram(lim, edges)[0] if lim is not None else np.zeros(bins, int)
            target = out / f"hist_{sc['name']}_{stat}.csv"
            with open(target, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["bin_left", "bin_right", "count", "limit_count", "limit_source"])
                src = report["tables"].get(fid, {}).get("file", "")
                for i in range(bins):
                    w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i]), int(lcounts[i]), src])
            written.append(target)

    power = []
    for sc in report["scenarios"]:
        if sc.get("kind") != "oscillation":
            continue
        for r in sc["results"]:
            if r["replications"]:
                power.append({"statistic": r["statistic"], "epsilon": r["epsilon"], "n": sc["n"],
                              "rejection_rate": r["rejection_rate"], "ci_low": r["ci95"][0], "ci_high": r["ci95"][1],
                              "replications": r["replications"]})
    for row in power:
        jsonschema.validate(row, POWER_ROW_SCHEMA)
    if power:
        power.sort(key=lambda r: (r["statistic"], r["epsilon"], r["n"]))
        target = out / "power_curve.csv"
        _write_csv(target, list(POWER_ROW_SCHEMA["required"]), power)
        written.append(target)

    summary = []
    for sc in report["scenarios"]:
        for r in sc["results"]:
            summary.append({"scenario": sc["name"], "statistic": r["statistic"], "epsilon": r["epsilon"],
                            "rejected": r["rejected"], "replications": r["replications"],
                            "rejection_rate": r["rejection_rate"], "ci_low": r["ci95"][0], "ci_high": r["ci95"][1]})
    target = out / "rejection_rates.csv"
    _write_csv(target, ["scenario", "statistic", "epsilon", "rejected", "replications", "rejection_rate", "ci_low",
                        "ci_high"], summary)
    written.append(target)
    return written


__all__ = [
    "CONFIG_SCHEMA",
    "ExperimentConfig",
    "POWER_ROW_SCHEMA",
    "load_config",
    "make_report",
    "parse_config",
    "resolve_tables",
    "run_experiment",
    "run_single_test",
    "scenarios",
    "validate_config",
]
