"""Run orchestration: chunked integration and analysis, CSV/JSON output, sweeps.

A run integrates the primary path in time chunks, carrying the state and the
angle reference across chunk boundaries, extracts the residual hierarchy
chunk by chunk, and streams rows to ``trajectory.csv``.  Closed-cycle actions
go to ``cycles.csv`` and the moving orbit centres to ``compare.csv``.  The
summary is then computed from those files alone, so every reported number can
be recomputed from the raw output.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..chart import ChartState, choose_pivot, to_chart, to_wavefunction, wrap_angle
from ..dynamics.analysis import (adiabatic_error, adiabatic_initial_state, center_agreement,
                                 extract_deviations, hierarchy_along, measured_centers, orbit_actions)
from ..dynamics.integrate import (chart_distance_series, integrate_hamilton, integrate_schrodinger,
                                  max_frequency)
from ..errors import AdiabaticError
from .config import ExperimentConfig, resolve_output_dir

log = logging.getLogger(__name__)

CSV_FORMAT = "%.17g"
BREAKDOWN_FACTOR = 100.0
TRACKING_FLOOR = 0.1
EDGE_FRACTION = 0.1
TRAJECTORY_FILE = "trajectory.csv"
CYCLES_FILE = "cycles.csv"
COMPARE_FILE = "compare.csv"
SUMMARY_FILE = "summary.json"
SWEEP_FILE = "sweep.csv"


def trajectory_header(K: int) -> list[str]:
    """Column names of ``trajectory.csv`` for hierarchy order ``K``."""
    cols = ["t", "R", "Rdot", "p", "q", "pbar", "qbar", "dp", "dq", "A1", "B1"]
    for k in range(2, K + 1):
        cols += [f"d{k}p", f"d{k}q", f"A{k}", f"B{k}"]
    cols += [f"I{k}" for k in range(1, K + 1)]
    cols += ["Err", "pivot", "I0", "oracle_dist"]
    return cols


def compare_header(K: int) -> list[str]:
    cols = ["t", "R", "pivot"]
    for k in range(1, K + 1):
        cols += [f"c{k}p", f"c{k}q", f"A{k}", f"B{k}"]
    return cols


CYCLES_HEADER = ["order", "t_start", "t_end", "action"]


@dataclass
class RunSummary:
    """Outcome of one experiment run.

    Attributes
    ----------
    stats : dict
        Nested statistics computed from the emitted files (see :func:`summarize_outputs`).
    checks : list of dict
        Results of the configured checks (``stat``, ``value``, ``passed``).
    """

    name: str
    status: str
    stats: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    wall_time: float = 0.0
    error: str | None = None
    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def checks_passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def stat(self, path: str):
        """Statistic addressed by a dotted path such as ``orders.1.I.mean``."""
        return lookup(self.stats, path)

    def to_dict(self) -> dict:
        return asdict(self)


def lookup(tree: dict, path: str):
    node = tree
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            raise KeyError(f"no statistic '{path}'")
        node = node[key]
    return node


# initial state and integration

def initial_state(config: ExperimentConfig, h, protocol) -> np.ndarray:
    """Normalized amplitudes at the start of the run."""
    if config.initial == "eigenstate":
        _, V = np.linalg.eigh(h.matrix(float(protocol.R(config.t_start))))
        return V[:, config.branch]
    if config.initial == "adiabatic":
        return to_wavefunction(adiabatic_initial_state(h, protocol, config.t_start, config.order, config.branch))
    psi = np.asarray(config.initial, dtype=complex)
    return psi / np.linalg.norm(psi)


def _chart_of(psi) -> ChartState:
    return to_chart(psi, choose_pivot(np.abs(psi) ** 2, 0), threshold=0.0)


class _Path:
    """One integration path carried across chunks."""

    def __init__(self, kind, h, protocol, psi0, config):
        self.kind, self.h, self.protocol, self.config = kind, h, protocol, config
        self.psi = psi0
        self.chart = _chart_of(psi0)

    def advance(self, times):
        kw = dict(atol=self.config.atol, t_eval=times)
        span = (float(times[0]), float(times[-1]))
        if self.kind == "schrodinger":
            traj = integrate_schrodinger(self.h, self.psi, self.protocol, span, self.config.rtol, **kw)
            self.psi = traj.psi[-1]
        else:
            traj = integrate_hamilton(self.h, self.chart, self.protocol, span, self.config.rtol, **kw)
            self.chart = traj.final_state()
        return traj


def _time_grid(config: ExperimentConfig, h, protocol):
    """Uniform global sample step and chunk boundaries (sample indices)."""
    t0, t1 = config.t_start, config.t_end
    omega = max(max_frequency(h, protocol, t0, t1), 1e-300)
    n = int(math.ceil(abs(t1 - t0) * omega * config.samples_per_period / (2.0 * math.pi)))
    n = max(n, 1)
    dt = (t1 - t0) / n
    per_chunk = max(1, int(round(config.chunk / abs(dt))))
    bounds = list(range(0, n, per_chunk)) + [n]
    return dt, n, bounds


# run

def run_experiment(config: ExperimentConfig, out_dir=None) -> RunSummary:
    """Integrate, analyse and write outputs for one configuration.

    Module errors are recorded in the summary (status ``failed``) after the
    partial outputs have been flushed, then re-raised.
    """
    out = resolve_output_dir(config, out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"trajectory": str(out / TRAJECTORY_FILE), "cycles": str(out / CYCLES_FILE),
             "compare": str(out / COMPARE_FILE), "summary": str(out / SUMMARY_FILE)}
    start = time.perf_counter()
    K = config.order
    summary = RunSummary(config.name, "ok", files=files)
    with open(files["trajectory"], "w") as f_traj, open(files["cycles"], "w") as f_cyc, \
            open(files["compare"], "w") as f_cmp:
        f_traj.write(",".join(trajectory_header(K)) + "\n")
        f_cyc.write(",".join(CYCLES_HEADER) + "\n")
        f_cmp.write(",".join(compare_header(K)) + "\n")
        failure = None
        try:
            _run_chunks(config, K, f_traj, f_cyc, f_cmp)
        except AdiabaticError as err:
            failure = err
            summary.status = "failed"
            summary.error = f"{type(err).__name__}: {err}"
    summary.wall_time = time.perf_counter() - start
    summary.stats = summarize_outputs(out, K)
    summary.stats["wall_time"] = summary.wall_time
    summary.checks = evaluate_checks(config.checks, summary.stats)
    with open(files["summary"], "w") as f:
        json.dump({"config": config.raw, **summary.to_dict()}, f, indent=2, default=_json_default)
    if failure is not None:
        log.error("run %s failed: %s", config.name, summary.error)
        raise type(failure)(f"run '{config.name}': {failure}") from failure
    return summary


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _run_chunks(config: ExperimentConfig, K: int, f_traj, f_cyc, f_cmp):
    h = config.model()
    protocol = config.protocol()
    psi0 = initial_state(config, h, protocol)
    other = "schrodinger" if config.primary == "hamilton" else "hamilton"
    primary = _Path(config.primary, h, protocol, psi0, config)
    oracle = _Path(other, h, protocol, psi0, config) if config.oracle else None
    dt, n, bounds = _time_grid(config, h, protocol)
    fp_pivot, dp_ref = None, None
    for c, (lo, hi) in enumerate(zip(bounds[:-1], bounds[1:])):
        idx = np.arange(lo, hi + 1)
        times = config.t_start + idx * dt
        times[-1] = config.t_start + hi * dt if hi < n else config.t_end
        traj = primary.advance(times)
        dist = np.full(times.size, np.nan)
        if oracle is not None:
            dist = chart_distance_series(traj, oracle.advance(times))
        track = hierarchy_along(h, protocol, times, K, config.branch, pivot=fp_pivot)
        res = extract_deviations(traj, h, protocol, K, branch=config.branch, track=track,
                                 dp_reference=dp_ref)
        fp_pivot = int(track.pivots[-1])
        dp_ref = res.deviations[1][-1, 0]
        # the last sample of a chunk is the first of the next one
        keep = np.ones(times.size, dtype=bool) if hi == n else np.arange(times.size) < times.size - 1
        rows = keep & ((idx % config.stride) == 0)
        _write_rows(f_traj, _trajectory_rows(res, h, protocol, K, dist)[rows])
        _write_rows(f_cmp, _compare_rows(res, K)[rows])
        res = orbit_actions(res)
        for k in range(1, K + 1):
            ca = res.actions[k]
            _write_rows(f_cyc, np.column_stack([np.full(ca.action.size, k), ca.t_start, ca.t_end, ca.action]))
        log.info("%s: chunk %d/%d done (t = %.6g)", config.name, c + 1, len(bounds) - 1, times[-1])


def _write_rows(handle, rows: np.ndarray):
    if rows.size:
        np.savetxt(handle, rows, fmt=CSV_FORMAT, delimiter=",")


def _trajectory_rows(res, h, protocol, K, dist) -> np.ndarray:
    track = res.hierarchy
    p, q = res.in_pivots(track.pivots)
    cols = [res.times, track.derivs[0], track.derivs[1], p[:, 0], q[:, 0],
            wrap_angle(track.zbar[:, 0]), track.zbar[:, 1]]
    for k in range(1, K + 1):
        cols += [res.deviations[k][:, 0], res.deviations[k][:, 1], track.shifts[k][:, 0], track.shifts[k][:, 1]]
    cols += [res.instantaneous_actions[k] for k in range(1, K + 1)]
    cols += [adiabatic_error(res), track.pivots.astype(float), res.instantaneous_actions[0], dist]
    return np.column_stack(cols)


def _compare_rows(res, K) -> np.ndarray:
    track = res.hierarchy
    cols = [res.times, track.derivs[0], track.pivots.astype(float)]
    for k in range(1, K + 1):
        centre = measured_centers(res, k, complete=True)
        cols += [centre[:, 0], centre[:, 1], track.shifts[k][:, 0], track.shifts[k][:, 1]]
    return np.column_stack(cols)


# summary

def _read_csv(path) -> dict:
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip().split(",")
        empty = not f.readline()
    if empty:
        data = np.zeros((0, len(header)))
    else:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def _series_stats(x: np.ndarray) -> dict:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return {"mean": None, "min": None, "max": None, "drift": None, "variation": None}
    mean = float(np.mean(x))
    edge = max(1, int(EDGE_FRACTION * x.size))
    scale = abs(mean) if mean != 0 else float("nan")
    return {"mean": mean, "min": float(np.min(x)), "max": float(np.max(x)),
            "drift": float((np.mean(x[-edge:]) - np.mean(x[:edge])) / scale),
            "variation": float((np.max(x) - np.min(x)) / scale)}


def _peaks(R, values) -> dict:
    ok = np.isfinite(values)
    if not np.any(ok):
        return {"R_at_max": None, "R_at_min": None}
    Rv, v = R[ok], values[ok]
    return {"R_at_max": float(Rv[np.argmax(v)]), "R_at_min": float(Rv[np.argmin(v)])}


def summarize_outputs(out_dir, K: int) -> dict:
    """Statistics of a run, computed only from the files it wrote.

    Per order ``k``: residual ranges, mean residual against the mean predicted
    shift, instantaneous-action statistics, tracking error
    ``|delta^k - S_k| / |S_k|`` where ``|S_k|`` exceeds a tenth of its maximum,
    orbit-centre agreement and peak locations, and closed-cycle actions.
    """
    out = Path(out_dir)
    traj = _read_csv(out / TRAJECTORY_FILE)
    cmp_ = _read_csv(out / COMPARE_FILE)
    cyc = _read_csv(out / CYCLES_FILE)
    stats = {"rows": int(traj["t"].size), "orders": {}}
    if traj["t"].size == 0:
        return stats
    for k in range(1, K + 1):
        dname = ("dp", "dq") if k == 1 else (f"d{k}p", f"d{k}q")
        dev = np.column_stack([traj[dname[0]], traj[dname[1]]])
        pred = np.column_stack([traj[f"A{k}"], traj[f"B{k}"]])
        size = np.linalg.norm(pred, axis=1)
        peak = float(np.max(size))
        entry = {
            "dp": _series_stats(dev[:, 0]), "dq": _series_stats(dev[:, 1]),
            "I": _series_stats(traj[f"I{k}"]),
            "shift": {"mean_measured": np.mean(dev, axis=0).tolist(),
                      "mean_predicted": np.mean(pred, axis=0).tolist(),
                      "max_abs_predicted": np.max(np.abs(pred), axis=0).tolist()},
        }
        if peak > 0:
            use = size > TRACKING_FLOOR * peak
            err = np.linalg.norm(dev[use] - pred[use], axis=1) / size[use]
            entry["tracking"] = {"max": float(np.max(err)), "mean": float(np.mean(err))}
        else:
            entry["tracking"] = {"max": None, "mean": None}
        centre = np.column_stack([cmp_[f"c{k}p"], cmp_[f"c{k}q"]])
        cpred = np.column_stack([cmp_[f"A{k}"], cmp_[f"B{k}"]])
        ok = np.all(np.isfinite(centre), axis=1)
        agreement = center_agreement(centre[ok], cpred[ok], TRACKING_FLOOR) if np.any(ok) else float("nan")
        comp = int(np.argmax(np.max(np.abs(cpred), axis=0))) if cpred.size else 0
        entry["center"] = {
            "agreement": None if not np.isfinite(agreement) else agreement,
            "max_abs": float(np.max(np.abs(centre[ok]))) if np.any(ok) else None,
            "component": "pq"[comp],
            "peak_measured": _peaks(cmp_["R"], centre[:, comp]),
            "peak_predicted": _peaks(cmp_["R"], cpred[:, comp]),
        }
        acts = cyc["action"][cyc["order"] == k]
        entry["cycles"] = {"count": int(acts.size), **_series_stats(acts)}
        stats["orders"][str(k)] = entry
    stats["I0"] = _series_stats(traj["I0"])
    stats["Err"] = _series_stats(traj["Err"])
    dist = traj["oracle_dist"]
    stats["oracle"] = {"max_distance": float(np.max(dist)) if np.all(np.isfinite(dist)) else None,
                       "mean_distance": float(np.mean(dist)) if np.all(np.isfinite(dist)) else None}
    # the protocol-(i) oscillation bound for the same |rate| is 2 max|B1|
    bound = 2.0 * float(np.max(np.abs(traj["B1"])))
    ratio = float(np.max(np.abs(traj["dq"]))) / bound if bound > 0 else float("inf")
    stats["breakdown_ratio"] = ratio
    stats["breakdown"] = bool(ratio > BREAKDOWN_FACTOR)
    return stats


def evaluate_checks(checks: list, stats: dict) -> list[dict]:
    """Apply configured checks to a statistics tree."""
    results = []
    for check in checks:
        path = check["stat"]
        try:
            value = lookup(stats, path)
        except KeyError:
            results.append({"stat": path, "value": None, "passed": False, "reason": "missing"})
            continue
        if "equals" in check:
            passed = value == check["equals"]
        elif value is None:
            passed = False
        elif "target" in check:
            passed = abs(value - check["target"]) <= check.get("rtol", 0.0) * abs(check["target"])
        elif "below" in check:
            passed = value < check["below"]
        else:
            passed = value > check["above"]
        results.append({"stat": path, "value": value, "passed": bool(passed),
                        **{k: v for k, v in check.items() if k != "stat"}})
    return results


# sweeps and comparison

def _sweep_job(raw: dict, axis: str, value: float, out_dir: str) -> dict:
    from .config import config_from_dict

    config = config_from_dict(raw).with_value(axis, value)
    try:
        return run_experiment(config, out_dir).to_dict()
    except AdiabaticError:
        # the failed run already wrote its summary next to the partial output
        with open(Path(out_dir) / SUMMARY_FILE) as f:
            recorded = json.load(f)
        recorded.pop("config", None)
        return recorded


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        elif isinstance(value, (bool, int, float)) or value is None:
            flat[name] = value
    return flat


def run_sweep(config: ExperimentConfig, axis: str, values, out_dir=None,
              workers: int | None = None) -> list[RunSummary]:
    """Independent runs over one dotted numeric parameter, merged into ``sweep.csv``.

    Runs go to ``<out>/<axis>=<value>``; failures are recorded and the sweep
    continues.  Output order follows ``values``.
    """
    values = [float(v) for v in values]
    base = resolve_output_dir(config, out_dir)
    base.mkdir(parents=True, exist_ok=True)
    if values:
        config.with_value(axis, values[0])
    dirs = [str(base / f"{axis}={v:.17g}") for v in values]
    workers = config.workers if workers is None else workers
    if workers > 1 and len(values) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(values))) as pool:
            results = list(pool.map(_sweep_job, [config.raw] * len(values), [axis] * len(values), values, dirs))
    else:
        results = [_sweep_job(config.raw, axis, v, d) for v, d in zip(values, dirs)]
    summaries = [RunSummary(**r) for r in results]
    rows = [{"value": v, "status": s.status, **_flatten(s.stats)} for v, s in zip(values, summaries)]
    keys = ["value", "status"] + sorted({k for r in rows for k in r} - {"value", "status", "wall_time"})
    with open(base / SWEEP_FILE, "w") as f:
        f.write(",".join(keys) + "\n")
        for r in rows:
            f.write(",".join(_csv_cell(r.get(k)) for k in keys) + "\n")
    return summaries


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return CSV_FORMAT % value
    return str(value)


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float)), 1)[0])


def compare_hierarchy(config: ExperimentConfig, out_dir=None) -> dict:
    """Measured orbit centres against predicted shifts, per order.

    Returns the agreement metric (time mean of ``|centre - S_k| / |S_k|``
    where the prediction is non-negligible), the largest measured centre and
    the peak locations, plus the path of the ``compare.csv`` series.
    """
    summary = run_experiment(config, out_dir)
    report = {"name": config.name, "status": summary.status, "file": summary.files["compare"], "orders": {}}
    for k, entry in summary.stats.get("orders", {}).items():
        report["orders"][k] = entry["center"]
    return report
