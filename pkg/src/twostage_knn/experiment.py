"""Config-driven experiment suites, result files and their reloading.

Config grammar (INI, read with :mod:`configparser`)::

    [experiment]
    seed = 20240101            ; required, no implicit entropy
    trials = 50
    mc_points = 20000
    suites = passive, active   ; any of SUITES
    threads = 1
    witness_size = 10000
    unlabeled_budget = 10000

    [distribution]
    name = uniform1d-linear    ; remaining keys go to make_distribution
    slope = 80

    [params]                   ; HyperParams fields other than n, m, k
    delta = 0.2
    c0 = 1.0

    [schedule]
    points =
        1000 1000 60           ; one "n m k" triple per line

    [event_rates]              ; optional, used by the event_rates suite
    x = 0.5
    samplings = 1000
    gamma = 0.5

    [containment]              ; optional
    grid = 1000

Trial ``t`` of schedule point ``s`` is seeded with
``SeedSequence(seed, spawn_key=(s, t))``; every suite reuses that seed, so
the active and passive learners of one trial see the same first draws.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import metadata
from pathlib import Path

import numpy as np

from .active_sampling import Streams, run_algorithm1, run_round1
from .evaluation import (
    TrialRecord,
    active_bound,
    check_boundary_containment,
    check_region_containment,
    default_grid,
    disagreement_on,
    estimate_event_rates,
    frequency_within,
    paired_bootstrap_upper,
    run_passive_baseline,
)
from .oracles import make_distribution
from .region_estimation import ConstantsError, HyperParams, big_delta, derive_constants

SUITES = ("passive", "active", "active_vs_passive", "containment", "event_rates",
          "consistency")
METRICS = ("disagreement_active", "disagreement_passive", "excess_risk_active",
           "boundary_mass_bound", "easy_mass", "bv_event_rate", "nl_event_rate",
           "labels_used")
_PARAM_KEYS = ("delta", "pi", "zeta", "c0", "c1", "c2", "d_vc")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    distribution: str
    dist_params: tuple = ()
    params: tuple = ()
    schedule: tuple = ()
    trials: int = 1
    mc_points: int = 20_000
    suites: tuple = ("active",)
    threads: int = 1
    witness_size: int = 10_000
    unlabeled_budget: int = 10_000
    event_x: tuple = (0.5,)
    event_samplings: int = 1000
    event_gamma: float = 0.5
    grid: int | None = None
    source_text: str = field(default="", compare=False)

    def __post_init__(self):
        if self.trials < 0 or self.mc_points < 1 or self.threads < 1:
            raise ConfigError("trials must be >= 0, mc_points and threads >= 1")
        bad = [s for s in self.suites if s not in SUITES]
        if bad or not self.suites:
            raise ConfigError(f"unknown or missing suites {bad}; choose from {SUITES}")
        if not self.schedule:
            raise ConfigError("schedule needs at least one 'n m k' line")
        try:
            self.make_dist()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad distribution: {exc}") from exc

    def make_dist(self):
        return _dist(self.distribution, self.dist_params)

    def hyper(self, n: int, m: int, k: int) -> HyperParams:
        kw = dict(self.params)
        kw.setdefault("d_vc", self.make_dist().d_vc)
        return HyperParams(k=k, n=n, m=m, **kw)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source_text.encode()).hexdigest()

    def restrict(self, suite: str) -> "ExperimentConfig":
        if suite not in self.suites:
            raise ConfigError(f"suite {suite!r} is not enabled in the config")
        return ExperimentConfig(**{**self.__dict__, "suites": (suite,)})


@lru_cache(maxsize=16)
def _dist(name: str, params: tuple):
    return make_distribution(name, **dict(params))


def _number(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    for section in ("experiment", "distribution", "schedule"):
        if not cp.has_section(section):
            raise ConfigError(f"missing [{section}] section")
    ex = cp["experiment"]
    if "seed" not in ex:
        raise ConfigError("[experiment] seed is required")
    dist = dict(cp["distribution"])
    name = dist.pop("name", None)
    if not name:
        raise ConfigError("[distribution] name is required")
    dist_params = []
    for key, value in sorted(dist.items()):
        dist_params.append((key, value if key == "metric" else _number(value)))
    params = {}
    if cp.has_section("params"):
        for key, value in cp["params"].items():
            if key not in _PARAM_KEYS:
                raise ConfigError(f"unknown [params] key {key!r}")
            params[key] = int(value) if key == "d_vc" else float(value)
    schedule = []
    for line in cp["schedule"].get("points", "").splitlines():
        if line.strip():
            parts = line.split()
            if len(parts) != 3:
                raise ConfigError(f"schedule line {line!r} is not 'n m k'")
            schedule.append(tuple(int(p) for p in parts))
    ev = cp["event_rates"] if cp.has_section("event_rates") else {}
    grid = cp["containment"].get("grid") if cp.has_section("containment") else None
    try:
        return ExperimentConfig(
            seed=int(ex["seed"]),
            distribution=name,
            dist_params=tuple(dist_params),
            params=tuple(sorted(params.items())),
            schedule=tuple(schedule),
            trials=int(ex.get("trials", "1")),
            mc_points=int(ex.get("mc_points", "20000")),
            suites=tuple(s.strip() for s in ex.get("suites", "active").split(",") if s.strip()),
            threads=int(ex.get("threads", "1")),
            witness_size=int(ex.get("witness_size", "10000")),
            unlabeled_budget=int(ex.get("unlabeled_budget", "10000")),
            event_x=tuple(float(v) for v in str(ev.get("x", "0.5")).split(",")),
            event_samplings=int(ev.get("samplings", "1000")),
            event_gamma=float(ev.get("gamma", "0.5")),
            grid=int(grid) if grid else None,
            source_text=text,
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# -- trials ------------------------------------------------------------------

@lru_cache(maxsize=64)
def _easy_mass(config: ExperimentConfig, n: int, m: int, k: int) -> float:
    dist = config.make_dist()
    return float(dist.easy_measure(derive_constants(config.hyper(n, m, k))))


def _trial_seed(config: ExperimentConfig, s: int, t: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(config.seed, spawn_key=(s, t))


def run_trial(config: ExperimentConfig, suite: str, s: int, t: int) -> TrialRecord:
    n, m, k = config.schedule[s]
    rec = TrialRecord(suite=suite, schedule_index=s, trial_index=t,
                      seed=f"{config.seed}:{s}:{t}", n=n, m=m, k=k)
    try:
        params = config.hyper(n, m, k)
        consts = derive_constants(params)
    except (ValueError, ConstantsError) as exc:
        rec.status, rec.skip_reason = "skipped", str(exc)
        return rec
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _run(config, suite, rec, params, consts, _trial_seed(config, s, t))
    except Exception as exc:  # recorded per trial; the suite keeps going
        rec.status, rec.skip_reason = "error", f"{type(exc).__name__}: {exc}"
    return rec


def _run(config, suite, rec, params, consts, seed):
    dist = config.make_dist()
    n, m, k = params.n, params.m, params.k
    eval_points = dist.sample_instances(config.mc_points, Streams(seed)["evaluation"])
    if suite in ("active", "active_vs_passive", "consistency"):
        out = run_algorithm1(dist, params, seed, witness_size=config.witness_size,
                             unlabeled_budget=config.unlabeled_budget)
        wrong = disagreement_on(out.classifier(), dist, eval_points)
        rec.disagreement_active = float(wrong.mean())
        rec.excess_risk_active = float((np.abs(2 * dist.eta(eval_points) - 1) * wrong).mean())
        rec.easy_mass = _easy_mass(config, n, m, k)
        rec.boundary_mass_bound = active_bound(dist, params, rec.easy_mass)
        rec.labels_used = int(out.ledger.labels_used)
    if suite in ("passive", "active_vs_passive"):
        res = run_passive_baseline(dist, n + m, k, config.mc_points, seed, params.delta,
                                   eval_points=eval_points)
        rec.disagreement_passive = res["disagreement_passive"]
        if suite == "passive":
            rec.boundary_mass_bound = res["boundary_mass_bound"]
            rec.labels_used = res["labels_used"]
    if suite == "containment":
        _, handle = run_round1(dist, params, seed, config.witness_size)
        grid = default_grid(dist, config.grid)
        rec.containment_lemma1 = check_boundary_containment(handle, dist, grid)
        rec.containment_lemma9 = check_region_containment(handle, dist, grid)
        rec.easy_mass = _easy_mass(config, n, m, k)
        rec.labels_used = n
    if suite == "event_rates":
        rates = estimate_event_rates(dist, params, list(config.event_x), config.event_samplings,
                                     seed, gamma=config.event_gamma)
        rec.bv_event_rate, rec.nl_event_rate = rates.bv_rate, rates.nl_rate
        rec.labels_used = 0


def _task(args):
    return run_trial(*args)


# -- bundle ------------------------------------------------------------------

@dataclass
class ResultsBundle:
    records: list
    aggregates: dict
    criteria: list
    provenance: dict

    @property
    def criteria_passed(self) -> bool:
        return all(c["passed"] is not False for c in self.criteria)


def run_suite(config: ExperimentConfig, threads: int | None = None) -> ResultsBundle:
    tasks = [(config, suite, s, t) for suite in config.suites
             for s in range(len(config.schedule)) for t in range(config.trials)]
    workers = threads or config.threads
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_task, tasks, chunksize=1))
    else:
        records = [_task(t) for t in tasks]
    records.sort(key=lambda r: (SUITES.index(r.suite), r.schedule_index, r.trial_index))
    return ResultsBundle(records, aggregate(records), evaluate_criteria(config, records),
                         provenance(config))


def provenance(config: ExperimentConfig) -> dict:
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    return {
        "config_sha256": config.digest,
        "code_version": version,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": config.seed,
    }


def _summary(values: list) -> dict:
    a = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if a.size == 0:
        return {"count": 0, "mean": None, "median": None, "ci95": None}
    mean = float(a.mean())
    half = float(1.96 * a.std(ddof=1) / math.sqrt(a.size)) if a.size > 1 else 0.0
    return {"count": int(a.size), "mean": mean, "median": float(np.median(a)),
            "ci95": [mean - half, mean + half]}


def aggregate(records) -> dict:
    """Per ``suite/schedule`` group: mean, median and normal 95% CI of each metric."""
    groups: dict[str, list] = {}
    for r in records:
        if r.status == "ok":
            groups.setdefault(f"{r.suite}/{r.schedule_index}", []).append(r)
    out = {}
    for key, rows in groups.items():
        out[key] = {name: _summary([float(getattr(r, name)) for r in rows]) for name in METRICS}
        for name in ("containment_lemma1", "containment_lemma9"):
            flags = [getattr(r, name) for r in rows if getattr(r, name) is not None]
            out[key][name] = {"count": len(flags), "violations": flags.count(False)}
    return out


def _crit(name, passed, **detail):
    return {"name": name, "passed": passed, **detail}


def evaluate_criteria(config: ExperimentConfig, records) -> list:
    """Bound checks over seeds, each with three-sigma binomial slack."""
    out = []
    by_group: dict = {}
    for r in records:
        if r.status == "ok":
            by_group.setdefault((r.suite, r.schedule_index), []).append(r)
    for (suite, s), rows in sorted(by_group.items(), key=lambda kv: (SUITES.index(kv[0][0]), kv[0][1])):
        n, m, k = config.schedule[s]
        delta = config.hyper(n, m, k).delta
        tag = f"{suite}[{s}]"
        if suite in ("passive", "active"):
            col = "disagreement_passive" if suite == "passive" else "disagreement_active"
            bad = sum(getattr(r, col) > r.boundary_mass_bound for r in rows)
            out.append(_crit(f"{tag} bound violations", frequency_within(bad, len(rows), delta),
                             violations=bad, trials=len(rows), ceiling=delta))
        elif suite == "active_vs_passive":
            diffs = [r.disagreement_active - r.disagreement_passive for r in rows]
            upper = paired_bootstrap_upper(diffs, seed=config.seed)
            out.append(_crit(f"{tag} active not worse than passive", upper <= 0.0,
                             mean_difference=float(np.mean(diffs)), upper_95=upper,
                             easy_mass=rows[0].easy_mass))
        elif suite == "containment":
            for col, ceiling in (("containment_lemma1", delta ** 2 / 16),
                                 ("containment_lemma9", 3 * delta ** 2 / 32)):
                flags = [getattr(r, col) for r in rows if getattr(r, col) is not None]
                if not flags:
                    out.append(_crit(f"{tag} {col}", None, reason="precondition not met"))
                    continue
                bad = flags.count(False)
                out.append(_crit(f"{tag} {col}", frequency_within(bad, len(flags), ceiling),
                                 violations=bad, trials=len(flags), ceiling=ceiling))
        elif suite == "event_rates":
            samplings = config.event_samplings
            worst = max(r.bv_event_rate for r in rows)
            ceiling = 2 * math.exp(-2 * k * big_delta(k, delta) ** 2)
            ok = all(frequency_within(round(r.bv_event_rate * samplings), samplings, ceiling)
                     for r in rows)
            out.append(_crit(f"{tag} bad-vote rate", ok, worst=worst, ceiling=ceiling))
    cons = [s for s in range(len(config.schedule)) if ("consistency", s) in by_group]
    if len(cons) >= 2:
        medians = [float(np.median([r.excess_risk_active for r in by_group[("consistency", s)]]))
                   for s in cons]
        ok = all(b < a for a, b in zip(medians, medians[1:]))
        out.append(_crit("consistency median excess risk decreasing", ok, medians=medians))
    return out


# -- files -------------------------------------------------------------------

def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _parse_cell(name: str, text: str):
    kind = TrialRecord.__dataclass_fields__[name].type
    if "bool" in kind:
        return None if text == "" else text == "true"
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def trials_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = TrialRecord.columns()
    writer.writerow(cols)
    for r in records:
        writer.writerow([_cell(getattr(r, c)) for c in cols])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def emit_results(bundle: ResultsBundle, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write ``trials.csv`` and/or ``summary.json`` plus ``provenance.json``.

    Python's float repr is shortest round-trip, so JSON floats reload exactly;
    the CSV uses 17 significant digits.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        path = out / "trials.csv"
        path.write_text(trials_csv(bundle.records))
        written.append(path)
    if "json" in formats:
        path = out / "summary.json"
        summary = {"aggregates": bundle.aggregates, "criteria": bundle.criteria,
                   "criteria_passed": bundle.criteria_passed}
        path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        written.append(path)
    path = out / "provenance.json"
    path.write_text(json.dumps(bundle.provenance, indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def read_trials(path) -> list[TrialRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TrialRecord.columns():
            raise ValueError(f"unexpected trials.csv header {reader.fieldnames}")
        return [TrialRecord(**{k: _parse_cell(k, v) for k, v in row.items()}) for row in reader]


def load_results(out_dir) -> ResultsBundle:
    """Reload a results directory, checking aggregates against the CSV rows."""
    out = Path(out_dir)
    records = read_trials(out / "trials.csv")
    summary = json.loads((out / "summary.json").read_text())
    prov = json.loads((out / "provenance.json").read_text())
    recomputed = _jsonable(aggregate(records))
    if recomputed != summary["aggregates"]:
        raise ValueError("summary.json aggregates do not match trials.csv")
    return ResultsBundle(records, summary["aggregates"], summary["criteria"], prov)


def default_threads() -> int:
    return max(1, min(8, os.cpu_count() or 1))
