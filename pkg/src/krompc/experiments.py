"""Experiment pipeline behind the command line: collect, fit, run, sweep, audit.

Every stage writes plain files under ``out_dir``::

    snapshots/u<j>.csv + .json     one bucket per control anchor
    models/model_u<j>.json         fitted Koopman models
    models/ensemble_<kind>.json    switched / bilinear / localized ensembles
    run/<kind>/trace.csv           closed-loop traces (+ timing.csv)
    run/summary.json               metrics, recomputable from the traces
    sweep/results.csv              long-format (degree, volume, anchors) table

Numeric outputs depend only on the configuration (including ``seed``);
wall-times are kept in separate ``timing`` files.
"""

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from math import comb
from pathlib import Path
from types import SimpleNamespace

import numpy as np
from scipy.integrate import trapezoid

from . import io
from ._validation import NumericalError, check_positive_int
from .dictionary import build_dictionary, lift
from .edmd import SnapshotSet, accumulator_from_snapshots, edmd_fit
from .krom import SwitchedBank, build_bilinear, build_localized, krom_step
from .mpc import (
    MpcConfig,
    PlantOracle,
    UpdatePolicy,
    closed_loop,
    constant_reference,
    piecewise_constant_reference,
    running_cost_window,
    sampled_reference,
)
from .plant import (
    BurgersConfig,
    BurgersPlant,
    ConstantSchedule,
    CyclicSchedule,
    EmptyBucketError,
    LinearTestPlant,
    VanDerPolPlant,
    VdpConfig,
    generate_snapshots,
    pairs_from_trajectory,
)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "make_plant",
    "collect",
    "fit",
    "run",
    "sweep",
    "audit",
    "subsample",
    "make_reference",
    "delta_j",
]

SURROGATES = ("switched", "bilinear", "localized", "oracle", "oracle-continuous")
PLANTS = ("burgers", "vdp", "linear", "import")

_PLANT_DEFAULTS = {
    "burgers": {
        "anchors": [-0.075, 0.0, 0.075],
        "horizon": 3,
        "collect_duration": 60.0,
        "dt_sample": 0.005,
        "lag": 0.5,
        "switch_period": 2.0,
        "reference": {"kind": "piecewise", "breaks": [20.0, 40.0],
                      "values": [[0.3] * 4, [-0.2] * 4, [0.1] * 4]},
        "initial_state": {"kind": "sine", "amplitude": 0.5},
    },
    "vdp": {
        "anchors": [-1.0, 0.0, 1.0],
        "horizon": 3,
        "collect_duration": 60.0,
        "dt_sample": 0.1,
        "lag": 0.1,
        "switch_period": 1.0,
        "reference": {"kind": "constant", "value": [0.0]},
        "tracked": [0],
        "initial_state": [1.0, 1.0],
    },
    "linear": {
        "anchors": [-2.0, 0.0, 2.0],
        "horizon": 3,
        "collect_duration": 30.0,
        "dt_sample": 0.1,
        "lag": 0.1,
        "switch_period": 1.0,
        "reference": {"kind": "constant", "value": [0.5]},
        "tracked": [0],
        "initial_state": None,
    },
    "import": {
        "horizon": 5,
    },
}


@dataclass
class ExperimentConfig:
    """All knobs of an experiment; ``None`` fields take plant-specific defaults.

    ``plant_params`` is forwarded to the plant: Burgers accepts the
    :class:`BurgersConfig` fields, Van der Pol ``dt_sim`` and ``y0``, the
    linear plant ``dim``, ``spectral_radius``, ``sample_time`` and
    ``plant_seed``.  ``online`` enables streaming updates with keys
    ``epsilon``, ``period`` and ``initial_pairs``.
    """

    plant: str = "burgers"
    plant_params: dict = field(default_factory=dict)
    anchors: list = None
    degree: int = 2
    data_volume: int = None
    horizon: int = None
    surrogate: str = "switched"
    compare: list = field(default_factory=list)
    baseline: bool = True
    duration: float = 60.0
    reference: dict = None
    tracked: list = None
    initial_state: object = None
    online: dict = None
    seed: int = 0
    out_dir: str = "runs"
    jobs: int = 1
    collect_duration: float = None
    dt_sample: float = None
    lag: float = None
    switch_period: float = None
    stride: int = 1
    rtol: float = 1e-10
    window: float = 10.0
    budget: int = 10**6
    import_files: list = field(default_factory=list)
    sweep_degrees: list = field(default_factory=lambda: [1, 2, 3])
    sweep_volumes: list = field(default_factory=lambda: [500, 2000, 8000])
    sweep_anchor_counts: list = None

    def __post_init__(self):
        if self.plant not in PLANTS:
            raise ValueError(f"plant must be one of {PLANTS}, got {self.plant!r}")
        for key, value in _PLANT_DEFAULTS[self.plant].items():
            if getattr(self, key) is None:
                setattr(self, key, json.loads(json.dumps(value)))
        kinds = [self.surrogate, *self.compare]
        for kind in kinds:
            if kind not in SURROGATES:
                raise ValueError(f"surrogate must be one of {SURROGATES}, got {kind!r}")
        check_positive_int(self.degree, "degree", 0)
        check_positive_int(self.horizon, "horizon")
        check_positive_int(self.jobs, "jobs")
        check_positive_int(self.stride, "stride")
        if self.data_volume is not None:
            check_positive_int(self.data_volume, "data_volume")
        if self.plant != "import":
            if self.anchors is None or len(self.anchors) < 2:
                raise ValueError("need at least two control anchors")
            if len(set(float(a) for a in self.anchors)) != len(self.anchors):
                raise ValueError("control anchors must be distinct")
        elif not self.import_files:
            raise ValueError("plant 'import' needs import_files")
        for path in self.import_files:
            if not Path(path).with_suffix(".csv").exists():
                raise FileNotFoundError(f"import file {path} does not exist")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.online is not None:
            unknown = set(self.online) - {"epsilon", "period", "initial_pairs"}
            if unknown:
                raise ValueError(f"unknown online keys {sorted(unknown)}")

    def to_dict(self):
        return dataclasses.asdict(self)

    def replace(self, **changes):
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig(**data)


def load_config(path=None, overrides=None):
    """Config from a JSON file with ``{field: value}`` overrides applied.

    Dotted keys (``plant_params.viscosity``) address nested dictionaries.
    """
    data = {}
    if path is not None:
        data = json.loads(Path(path).read_text())
        if not isinstance(data, dict):
            raise ValueError("config file must contain a JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in (overrides or {}).items():
        head, _, rest = key.replace("-", "_").partition(".")
        if head not in names:
            raise ValueError(f"unknown config field {head!r}")
        if rest:
            node = data.setdefault(head, {})
            *parents, leaf = rest.split(".")
            for p in parents:
                node = node.setdefault(p, {})
            node[leaf] = value
        else:
            data[head] = value
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config field(s) {sorted(unknown)}")
    return ExperimentConfig(**data)


def _fingerprint(data):
    return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]


def make_plant(cfg):
    params = dict(cfg.plant_params)
    if cfg.plant == "burgers":
        return BurgersPlant(BurgersConfig(**params))
    if cfg.plant == "vdp":
        return VanDerPolPlant(VdpConfig(**params))
    if cfg.plant == "linear":
        seed = params.pop("plant_seed", cfg.seed)
        return LinearTestPlant.random(params.pop("dim", 2), seed, params.pop("spectral_radius", 0.9),
                                      params.pop("sample_time", cfg.lag))
    raise ValueError("imported data has no simulated plant")


def _collection_ics(cfg, plant):
    if cfg.plant == "linear":
        rng = np.random.default_rng([cfg.seed, 7])
        return [np.zeros(plant.state_dim)] + [rng.uniform(-1, 1, plant.state_dim) for _ in range(2)]
    if cfg.plant == "vdp":
        return [np.asarray(plant.config.y0, dtype=float), np.array([-2.0, 0.0]), np.array([0.5, -1.5])]
    return plant.initial_conditions()


def initial_state(cfg, plant):
    spec = cfg.initial_state
    if spec is None:
        return np.zeros(plant.state_dim)
    if isinstance(spec, dict):
        if spec.get("kind") != "sine" or cfg.plant != "burgers":
            raise ValueError(f"unsupported initial_state {spec!r}")
        x, L = plant.config.x, plant.config.domain_length
        return float(spec.get("amplitude", 1.0)) * np.sin(2.0 * np.pi * float(spec.get("mode", 1)) * x / L)
    y0 = np.asarray(spec, dtype=float)
    if y0.shape != (plant.state_dim,):
        raise ValueError(f"initial_state must have {plant.state_dim} entries")
    return y0


def make_reference(spec):
    kind = spec.get("kind")
    if kind == "constant":
        return constant_reference(spec["value"])
    if kind == "piecewise":
        return piecewise_constant_reference(spec["breaks"], spec["values"])
    if kind == "sampled":
        return sampled_reference(spec["times"], spec["values"])
    raise ValueError(f"unknown reference kind {kind!r}")


def _collect_spec(cfg):
    return {k: getattr(cfg, k) for k in ("plant", "plant_params", "anchors", "collect_duration", "dt_sample",
                                          "lag", "switch_period", "stride", "seed", "import_files")}


def collect_snapshots(cfg):
    """Snapshot buckets ``{u: SnapshotSet}`` for ``cfg`` (no files written)."""
    if cfg.plant == "import":
        return _import_snapshots(cfg)
    plant = make_plant(cfg)
    anchors = sorted(float(a) for a in cfg.anchors)
    schedules = [ConstantSchedule(a) for a in anchors] + [CyclicSchedule(anchors, cfg.switch_period)]
    names = _obs_names(cfg, plant)
    return generate_snapshots(plant, schedules, _collection_ics(cfg, plant), cfg.collect_duration, cfg.dt_sample,
                              cfg.lag, anchors, cfg.stride, names)


def _obs_names(cfg, plant):
    if cfg.plant == "burgers":
        return [f"y(x={p:g})" for p in plant.config.obs_points]
    return [f"z{i}" for i in range(plant.obs_dim)]


def _import_snapshots(cfg):
    buckets = {}
    names = None
    for path in cfg.import_files:
        traj = io.read_trajectory(path)
        dt = np.diff(traj.times)
        if not np.allclose(dt, dt[0], rtol=1e-9, atol=0.0):
            raise ValueError(f"{path}: samples must be equidistant")
        lag_steps = int(round(cfg.lag / dt[0]))
        if lag_steps < 1 or abs(lag_steps * dt[0] - cfg.lag) > 1e-9 * cfg.lag:
            raise ValueError(f"{path}: lag {cfg.lag} is not a multiple of the sample spacing {dt[0]}")
        header = io.read_table(Path(path).with_suffix(".csv"))[0]
        names = names or header[1:-1]
        for value, (Z, Zt) in pairs_from_trajectory(traj, lag_steps, cfg.stride).items():
            buckets.setdefault(value, []).append((Z, Zt))
    anchors = cfg.anchors if cfg.anchors is not None else sorted(buckets)
    empty = [a for a in anchors if float(a) not in buckets]
    if empty:
        raise EmptyBucketError(empty)
    return {float(a): SnapshotSet(np.hstack([b[0] for b in buckets[float(a)]]),
                                  np.hstack([b[1] for b in buckets[float(a)]]), cfg.lag, float(a), names)
            for a in sorted(anchors)}


def collect(cfg):
    """Generate snapshots and write one CSV + manifest per control value."""
    snaps = collect_snapshots(cfg)
    out = Path(cfg.out_dir) / "snapshots"
    paths = [io.write_snapshots(out / f"u{j}", s) for j, s in enumerate(snaps.values())]
    io.write_json(out / "stage.json", {"collect": _collect_spec(cfg), "fingerprint": _fingerprint(_collect_spec(cfg)),
                                       "files": [p.name for p in paths],
                                       "pair_counts": [s.n_pairs for s in snaps.values()]})
    return paths


def load_snapshots(cfg):
    """Snapshots from ``out_dir`` if they match ``cfg``, otherwise collect afresh."""
    out = Path(cfg.out_dir) / "snapshots"
    stage = out / "stage.json"
    if stage.exists() and io.read_json(stage).get("fingerprint") == _fingerprint(_collect_spec(cfg)):
        files = io.read_json(stage)["files"]
        snaps = [io.read_snapshots(out / f) for f in files]
        return {s.control_value: s for s in snaps}
    collect(cfg)
    return load_snapshots(cfg)


def subsample(snaps, volume, seed):
    """At most ``volume`` pairs per control, drawn uniformly without replacement.

    The draw depends only on ``(seed, volume, control index)`` and keeps the
    original pair order.
    """
    if volume is None:
        return dict(snaps)
    out = {}
    for j, (u, s) in enumerate(sorted(snaps.items())):
        if s.n_pairs <= volume:
            out[u] = s
            continue
        rng = np.random.default_rng([int(seed), int(volume), j])
        idx = np.sort(rng.choice(s.n_pairs, size=volume, replace=False))
        out[u] = s.subset(idx)
    return out


def fit_bank(snaps, degree, rtol):
    d = build_dictionary(next(iter(snaps.values())).obs_dim, degree)
    return SwitchedBank(tuple(edmd_fit(s, d, rtol) for s in snaps.values()))


def fit(cfg, snaps=None):
    """Fit one model per control and write model and ensemble manifests."""
    if snaps is None:
        snaps = load_snapshots(cfg)
    snaps = subsample(snaps, _training_volume(cfg), cfg.seed)
    bank = fit_bank(snaps, cfg.degree, cfg.rtol)
    out = Path(cfg.out_dir) / "models"
    names = []
    for j, model in enumerate(bank.models):
        io.write_model(out / f"model_u{j}.json", model)
        names.append(f"model_u{j}.json")
    ensembles = {"switched": io.write_ensemble(out / "ensemble_switched.json", "switched", names)}
    ensembles["bilinear"] = io.write_ensemble(out / "ensemble_bilinear.json", "bilinear", [names[0], names[-1]])
    ensembles["localized"] = io.write_ensemble(out / "ensemble_localized.json", "localized", names)
    return bank, ensembles


def _training_volume(cfg):
    if cfg.online is not None:
        return int(cfg.online.get("initial_pairs", 50))
    return cfg.data_volume


def _mpc_config(cfg, seed=None):
    return MpcConfig(cfg.horizon, cfg.lag, make_reference(cfg.reference), cfg.tracked,
                     budget=cfg.budget, seed=cfg.seed if seed is None else seed)


def make_surrogate(kind, bank, plant, anchors):
    if kind == "switched":
        return bank
    if kind == "bilinear":
        return build_bilinear(bank.models[0], bank.models[-1])
    if kind == "localized":
        return build_localized(bank)
    if kind == "oracle":
        return PlantOracle(plant, anchors)
    if kind == "oracle-continuous":
        return PlantOracle(plant, continuous=True, bounds=(min(anchors), max(anchors)))
    raise ValueError(f"unknown surrogate kind {kind!r}")


def _baseline_kind(kind):
    return "oracle-continuous" if kind in ("bilinear", "localized") else "oracle"


def delta_j(trace, baseline):
    """Time integral of ``|J_surrogate(t) - J_baseline(t)|`` over the run."""
    if len(trace.times) != len(baseline.times) or not np.allclose(trace.times, baseline.times):
        raise ValueError("traces must share one time grid")
    if len(trace.times) < 2:
        return 0.0
    return float(trapezoid(np.abs(trace.stage_costs - baseline.stage_costs), trace.times))


def _trace_metrics(trace, window):
    return {
        "total_cost": trace.total_cost,
        "integrated_cost": trace.integrated_cost(),
        "final_window_cost": float(trace.window_costs(window)[-1]),
        "n_steps": int(len(trace.controls)),
    }


def _run_one(cfg, kind, bank, plant, mpc_cfg, y0, update_policy=None):
    surrogate = make_surrogate(kind, bank, plant, sorted(float(a) for a in cfg.anchors))
    return closed_loop(plant, surrogate, mpc_cfg, y0, cfg.duration, update_policy)


def run(cfg):
    """Closed-loop runs for ``cfg.surrogate`` (and ``cfg.compare``), plus the plant baseline.

    Returns the summary dictionary that is also written to ``run/summary.json``.
    """
    if cfg.plant == "import":
        raise ValueError("closed-loop runs need a simulated plant")
    plant = make_plant(cfg)
    snaps = load_snapshots(cfg)
    bank, ensembles = fit(cfg, snaps)
    mpc_cfg = _mpc_config(cfg)
    y0 = initial_state(cfg, plant)
    kinds = list(dict.fromkeys([cfg.surrogate, *cfg.compare]))
    baselines = {}
    if cfg.baseline:
        for kind in kinds:
            if not kind.startswith("oracle"):
                baselines[kind] = _baseline_kind(kind)
    all_kinds = list(dict.fromkeys(kinds + list(baselines.values())))
    out = Path(cfg.out_dir) / "run"
    results, traces = {}, {}
    for kind in all_kinds:
        policy = None
        if cfg.online is not None and kind == "switched":
            train = subsample(snaps, _training_volume(cfg), cfg.seed)
            accs = [accumulator_from_snapshots(s, bank.dictionary, cfg.rtol) for s in train.values()]
            policy = UpdatePolicy(accs, cfg.online.get("epsilon", 0.025), cfg.online.get("period", 10.0))
        res = _run_one(cfg, kind, bank, plant, mpc_cfg, y0, policy)
        traces[kind] = res.trace
        io.write_trace(out / kind, res.trace, cfg.window)
        entry = _trace_metrics(res.trace, cfg.window)
        entry["mean_solve_time_s"] = float(np.mean(res.trace.solve_times)) if len(res.trace.solve_times) else 0.0
        if policy is not None:
            entry["update_times"] = [float(t) for t in res.update_times]
            entry["window_cost_at_updates"] = [running_cost_window(res.trace, t, min(cfg.window, t))
                                               for t in res.update_times]
        results[kind] = entry
    for kind, base in baselines.items():
        results[kind]["baseline"] = base
        results[kind]["delta_J"] = delta_j(traces[kind], traces[base])
        base_total = results[base]["total_cost"]
        results[kind]["cost_ratio"] = results[kind]["total_cost"] / base_total if base_total > 0 else None
    summary = {
        "plant": cfg.plant,
        "degree": cfg.degree,
        "k": bank.dictionary.size,
        "anchors": sorted(float(a) for a in cfg.anchors),
        "window": cfg.window,
        "tracked": cfg.tracked,
        "runs": results,
    }
    io.write_json(out / "summary.json", summary)
    io.write_json(out / "manifest.json", {
        "config": cfg.to_dict(),
        "surrogate_files": {k: str(Path(v).relative_to(cfg.out_dir)) for k, v in ensembles.items()},
        "seeds": {"seed": cfg.seed, "subsample": [cfg.seed, _training_volume(cfg)]},
        "runs": all_kinds,
    })
    return summary


def _time_per_call(fn, min_time=0.2, max_reps=100000):
    fn()
    reps, total = 0, 0.0
    while total < min_time and reps < max_reps:
        tic = time.perf_counter()
        fn()
        total += time.perf_counter() - tic
        reps += 1
    return total / reps


def measure_speedup(plant, bank, lag, y0, u=0.0, min_time=0.2):
    """``(plant step time, K-ROM step time)`` in seconds for one step of length ``lag``."""
    psi = lift(bank.dictionary, plant.observe(y0))
    model = bank.models[bank.n_controls // 2]
    t_plant = _time_per_call(lambda: plant.step(y0, u, lag), min_time)
    t_krom = _time_per_call(lambda: krom_step(model, psi), min_time)
    return t_plant, t_krom


_RESULT_COLUMNS = ["cell", "degree", "volume", "n_anchors", "k", "n_pairs", "surrogate", "status",
                   "total_cost", "integrated_cost", "delta_J", "baseline_total_cost", "error"]
_TIMING_COLUMNS = ["cell", "plant_step_s", "krom_step_s", "speedup", "mean_solve_time_s"]


def _anchor_set(cfg, count):
    anchors = sorted(float(a) for a in cfg.anchors)
    if count is None:
        return anchors
    count = check_positive_int(count, "anchor count", 2)
    if count == len(anchors):
        return anchors
    return [float(a) for a in np.linspace(anchors[0], anchors[-1], count)]


def _sweep_cell(task):
    """One grid cell; failures are returned, never raised."""
    cfg, cell, degree, volume, anchors, snaps, baseline = task
    row = {"cell": cell, "degree": degree, "volume": volume, "n_anchors": len(anchors), "surrogate": cfg.surrogate}
    timing = {"cell": cell}
    try:
        plant = make_plant(cfg)
        train = subsample(snaps, volume, cfg.seed)
        bank = fit_bank(train, degree, cfg.rtol)
        row["k"] = bank.dictionary.size
        row["n_pairs"] = min(s.n_pairs for s in train.values())
        cell_seed = int(np.random.SeedSequence([cfg.seed, cell]).generate_state(1)[0])
        mpc_cfg = _mpc_config(cfg, cell_seed)
        y0 = initial_state(cfg, plant)
        res = closed_loop(plant, make_surrogate(cfg.surrogate, bank, plant, anchors), mpc_cfg, y0, cfg.duration)
        row["total_cost"] = res.trace.total_cost
        row["integrated_cost"] = res.trace.integrated_cost()
        if baseline is not None:
            row["delta_J"] = delta_j(res.trace, baseline)
            row["baseline_total_cost"] = baseline.total_cost
        row["status"] = "ok"
        t_plant, t_krom = measure_speedup(plant, bank, cfg.lag, y0, anchors[len(anchors) // 2])
        timing.update(plant_step_s=t_plant, krom_step_s=t_krom, speedup=t_plant / t_krom,
                      mean_solve_time_s=float(np.mean(res.trace.solve_times)) if len(res.trace.solve_times) else 0.0)
    except (ValueError, NumericalError, np.linalg.LinAlgError) as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row, timing


def sweep(cfg):
    """Grid over degree x data volume (x anchor count); writes ``sweep/results.csv``.

    ``delta_J`` is measured against a plant-as-predictor oracle run
    (disable with ``baseline=false``).
    """
    if cfg.plant == "import":
        raise ValueError("sweeps need a simulated plant")
    if cfg.surrogate.startswith("oracle"):
        raise ValueError("sweep the K-ROM surrogates, not the oracle")
    plant = make_plant(cfg)
    counts = cfg.sweep_anchor_counts or [None]
    tasks = []
    cell = 0
    for count in counts:
        anchors = _anchor_set(cfg, count)
        sub = cfg.replace(anchors=anchors)
        snaps = load_snapshots(sub.replace(out_dir=str(Path(cfg.out_dir) / "sweep" / f"anchors{len(anchors)}")))
        baseline = None
        if cfg.baseline:
            oracle = make_surrogate(_baseline_kind(cfg.surrogate), None, plant, anchors)
            baseline = closed_loop(plant, oracle, _mpc_config(sub), initial_state(sub, plant), cfg.duration).trace
        for degree in cfg.sweep_degrees:
            for volume in cfg.sweep_volumes:
                tasks.append((sub, cell, int(degree), None if volume is None else int(volume), anchors, snaps,
                              baseline))
                cell += 1
    if cfg.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(tasks), os.cpu_count() or 1)) as pool:
            outcomes = list(pool.map(_sweep_cell, tasks))
    else:
        outcomes = [_sweep_cell(t) for t in tasks]
    rows = [r for r, _ in outcomes]
    timings = [t for _, t in outcomes]
    out = Path(cfg.out_dir) / "sweep"
    io.write_table(out / "results.csv", _RESULT_COLUMNS, [[r.get(c) for c in _RESULT_COLUMNS] for r in rows])
    io.write_table(out / "timing.csv", _TIMING_COLUMNS, [[t.get(c) for c in _TIMING_COLUMNS] for t in timings])
    io.write_json(out / "manifest.json", {"config": cfg.to_dict(), "cells": len(rows), "obs_dim": plant.obs_dim,
                                          "anchor_sets": [_anchor_set(cfg, c) for c in counts]})
    return rows, timings


def _close(a, b, rtol=1e-9, atol=1e-12):
    if a is None or b is None:
        return a is None and b is None
    return abs(a - b) <= atol + rtol * max(abs(a), abs(b))


def _audit_trace(directory, entry, tracked, window):
    issues = []
    header, cols = io.read_trace_table(Path(directory) / "trace.csv")
    obs = np.column_stack([cols[h] for h in header if h not in ("t", "u", "stage_cost", "window_cost")
                           and not h.startswith("ref")])
    refs = np.column_stack([cols[h] for h in header if h.startswith("ref")])
    z = obs if tracked is None else obs[:, list(tracked)]
    costs = np.sum((z - refs) ** 2, axis=1)
    t = cols["t"]
    if not np.allclose(costs, cols["stage_cost"], rtol=1e-12, atol=1e-14):
        issues.append("stage_cost column does not match observations and references")
    record = SimpleNamespace(times=t, stage_costs=costs)
    windows = [running_cost_window(record, s, min(window, s - t[0])) for s in t]
    if not np.allclose(windows, cols["window_cost"], rtol=1e-9, atol=1e-12):
        issues.append("window_cost column does not match the stage costs")
    checks = {
        "total_cost": float(np.sum(costs[1:])),
        "integrated_cost": float(trapezoid(costs, t)) if len(t) > 1 else 0.0,
        "final_window_cost": float(windows[-1]),
        "n_steps": len(t) - 1,
    }
    _, timing = io.read_table(Path(directory) / "timing.csv")
    solve = np.array([float(r[2]) for r in timing])
    checks["mean_solve_time_s"] = float(np.mean(solve)) if len(solve) else 0.0
    if "window_cost_at_updates" in entry:
        checks["window_cost_at_updates"] = [running_cost_window(record, s, min(window, s)) for s in
                                            entry["update_times"]]
    for key, value in checks.items():
        reported = entry.get(key)
        if isinstance(value, list):
            ok = len(value) == len(reported) and all(_close(a, b) for a, b in zip(value, reported))
        else:
            ok = _close(float(value), reported)
        if not ok:
            issues.append(f"{key}: reported {reported}, recomputed {value}")
    return issues, t, costs


def audit(path):
    """Recompute every summary metric from exported tables.

    ``path`` is an output directory containing ``run/`` and/or ``sweep/``.
    Returns a list of human-readable issues (empty when consistent).
    """
    path = Path(path)
    issues = []
    checked = 0
    summary_path = path / "run" / "summary.json"
    if summary_path.exists():
        summary = io.read_json(summary_path)
        recomputed = {}
        for kind, entry in summary["runs"].items():
            found, t, costs = _audit_trace(path / "run" / kind, entry, summary.get("tracked"), summary["window"])
            issues += [f"run/{kind}: {msg}" for msg in found]
            recomputed[kind] = (t, costs)
            checked += 1
        for kind, entry in summary["runs"].items():
            if "baseline" in entry:
                t, c = recomputed[kind]
                _, cb = recomputed[entry["baseline"]]
                dj = float(trapezoid(np.abs(c - cb), t)) if len(t) > 1 else 0.0
                if not _close(dj, entry["delta_J"]):
                    issues.append(f"run/{kind}: delta_J reported {entry['delta_J']}, recomputed {dj}")
    results_path = path / "sweep" / "results.csv"
    if results_path.exists():
        manifest = io.read_json(path / "sweep" / "manifest.json")
        header, rows = io.read_table(results_path)
        _, timing = io.read_table(path / "sweep" / "timing.csv")
        q = manifest["obs_dim"]
        for r, tr in zip(rows, timing):
            rec = dict(zip(header, r))
            if rec["status"] != "ok":
                continue
            d = int(rec["degree"])
            if int(rec["k"]) != comb(q + d, d):
                issues.append(f"sweep cell {rec['cell']}: k={rec['k']} but C({q}+{d},{d})={comb(q + d, d)}")
            speed = float(tr[3])
            if not _close(speed, float(tr[1]) / float(tr[2])):
                issues.append(f"sweep cell {rec['cell']}: speedup column inconsistent with timings")
            checked += 1
    if checked == 0:
        raise FileNotFoundError(f"no run or sweep outputs under {path}")
    return issues

