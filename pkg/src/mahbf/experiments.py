"""Experiment harness: SNR/agent sweeps, ablation convergence runs, timing.

Every output file starts with a ``#`` header block holding the schema
version, the fully resolved spec and the seed list.  Outputs contain no
timestamps, so re-running a spec reproduces them byte for byte; the one
exception is the wall-clock section of ``timing.json``.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .channel import ChannelConfig, generate_channel
from .madrl import EpisodeResult, TrainerConfig, train_episode
from .numerics import ContractError, Rng, RNG_VERSION
from .precoding import DegenerateGeometryError, full_digital_zf_rate, random_phase_baseline

__all__ = [
    "SCHEMA_VERSION",
    "CASES",
    "ExperimentSpec",
    "preset",
    "resolve_spec",
    "case_config",
    "run_sweep",
    "run_convergence",
    "run_timing",
    "median_iterations",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

# rng stream layout per seed; the trainer also uses its stream + 1 for noise
_CHANNEL_STREAM = 0
_TRAIN_STREAM = 1 << 20
_BASELINE_STREAM = 1 << 21

# ablation cases: flags layered on top of the base trainer config
CASES = {
    "case1": {"prioritized": False, "frequency_term": False, "eta": 0.0},
    "case2": {"prioritized": True, "frequency_term": True, "eta": 0.0},
    "case3": {"prioritized": True, "frequency_term": True},
    "single": {"n_agents": 1, "prioritized": False, "frequency_term": False, "eta": 0.0},
}


@dataclass
class ExperimentSpec:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    snr_grid: list[float] = field(default_factory=lambda: [5.0])
    agent_counts: list[int] = field(default_factory=lambda: [2])
    seeds: list[int] = field(default_factory=lambda: [0])
    realizations: int = 1
    out_dir: str = "results"
    emit: dict = field(default_factory=lambda: {"rates_csv": True, "trace_csv": True, "timing_json": True})
    baseline_draws: int = 100
    convergence_snr: float = 5.0
    convergence_agents: int = 2
    workers: int = 1
    preset: str = "custom"

    def __post_init__(self):
        if isinstance(self.channel, dict):
            self.channel = ChannelConfig(**self.channel)
        if isinstance(self.trainer, dict):
            self.trainer = TrainerConfig(**self.trainer)
        self.snr_grid = [float(x) for x in self.snr_grid]
        self.agent_counts = [int(x) for x in self.agent_counts]
        self.seeds = [int(x) for x in self.seeds]
        if not self.snr_grid or not self.agent_counts or not self.seeds:
            raise ContractError("snr_grid, agent_counts and seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ContractError("seeds must be distinct")
        if self.realizations < 1 or self.baseline_draws < 1 or self.workers < 1:
            raise ContractError("realizations, baseline_draws and workers must be >= 1")
        if min(self.agent_counts) < 1:
            raise ContractError("agent counts must be >= 1")
        if self.channel.n_users > self.trainer.n_rf:
            raise ContractError(f"{self.channel.n_users} users exceed {self.trainer.n_rf} RF chains")
        unknown = set(self.emit) - {"rates_csv", "trace_csv", "timing_json"}
        if unknown:
            raise ContractError(f"unknown emit flags {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "channel": self.channel.to_dict(),
            "trainer": self.trainer.to_dict(),
            "snr_grid": self.snr_grid,
            "agent_counts": self.agent_counts,
            "seeds": self.seeds,
            "realizations": self.realizations,
            "baseline_draws": self.baseline_draws,
            "convergence_snr": self.convergence_snr,
            "convergence_agents": self.convergence_agents,
            "emit": dict(self.emit),
        }


def preset(name: str) -> ExperimentSpec:
    """``paper``: full-size system with the published hyperparameters.

    ``desk``: N_t=16, K=N_RF=4, Y in {1,2,3}, T=300, 10 seeds.  The desk
    trainer swaps the critic and predictive optimizer to Adam and raises
    the actor step; plain SGD at 1e-3 does not move these networks within
    300 iterations at this scale.
    """
    if name == "paper":
        return ExperimentSpec(
            channel=ChannelConfig(),
            trainer=TrainerConfig(n_rf=8),
            snr_grid=[-10.0, -5.0, 0.0, 5.0, 10.0],
            agent_counts=[1, 2, 3],
            seeds=list(range(10)),
            preset="paper",
        )
    if name == "desk":
        return ExperimentSpec(
            channel=ChannelConfig(n_tx=16, n_users=4),
            trainer=TrainerConfig(n_rf=4, n_agents=2, max_iters=300, critic_optimizer="adam", actor_lr=0.3),
            snr_grid=[0.0, 5.0, 10.0],
            agent_counts=[1, 2, 3],
            seeds=list(range(10)),
            preset="desk",
        )
    raise ContractError(f"unknown preset {name!r}")


def _merge(base: dict, patch: dict) -> dict:
    out = dict(base)
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "emit":
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_spec(preset_name: str | None = None, file_config: dict | None = None,
                 overrides: dict | None = None) -> ExperimentSpec:
    """Precedence: ``overrides`` (CLI) > ``file_config`` > preset defaults."""
    file_config = dict(file_config or {})
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    name = overrides.pop("preset", None) or file_config.pop("preset", None) or "desk"
    file_config.pop("preset", None)
    d = preset(name).to_dict()
    for patch in (file_config, overrides):
        channel = patch.get("channel", {})
        if "n_clusters" in channel and "cluster_powers" not in channel:
            d["channel"]["cluster_powers"] = None  # equal powers for the new cluster count
        d = _merge(d, patch)
    d.pop("preset", None)
    workers = d.pop("workers", 1)
    out_dir = d.pop("out_dir", "results")
    return ExperimentSpec(**d, workers=workers, out_dir=out_dir, preset=name)


def case_config(base: TrainerConfig, case: str, n_agents: int) -> TrainerConfig:
    if case not in CASES:
        raise ContractError(f"unknown case {case!r}")
    flags = dict(CASES[case])
    flags.setdefault("n_agents", n_agents)
    return replace(base, **flags)


# ------------------------------------------------------------------ points

def _channel(spec_channel: dict, seed: int, realization: int, max_draws: int = 100) -> np.ndarray:
    """Channel for one point; rank-deficient draws are rejected and redrawn from the same stream."""
    cfg, rng = ChannelConfig(**spec_channel), Rng(seed, _CHANNEL_STREAM + realization)
    for _ in range(max_draws):
        H = generate_channel(cfg, rng)
        if np.linalg.cond(H @ H.conj().T) < 1e12:
            return H
    raise DegenerateGeometryError(f"no well-conditioned channel in {max_draws} draws")


def _episode(H: np.ndarray, trainer: dict, seed: int, realization: int) -> EpisodeResult:
    return train_episode(H, TrainerConfig(**trainer), Rng(seed, _TRAIN_STREAM + 2 * realization))


def _sweep_point(task: dict) -> dict:
    seed, r = task["seed"], task["realization"]
    trainer = dict(task["trainer"], snr_db=task["snr_db"], n_agents=task["n_agents"])
    cfg = TrainerConfig(**trainer)
    row = {k: task[k] for k in ("point", "snr_db", "n_agents", "seed", "realization")}
    H = _channel(task["channel"], seed, r)
    try:
        ub = full_digital_zf_rate(H, cfg.link.noise_powers(H.shape[0]), cfg.link.p_total)
        brng = Rng(seed, _BASELINE_STREAM + r)
        base = np.array([random_phase_baseline(H, cfg.link, brng, cfg.reward_form).sum_rate
                         for _ in range(task["baseline_draws"])])
        res = _episode(H, trainer, seed, r)
    except (ArithmeticError, ContractError) as exc:
        log.warning("point %d failed: %s", task["point"], exc)
        return {**row, "status": "failed", "iterations": 0, "converged_at": "", "mahbf_rate": float("nan"),
                "first_rate": float("nan"), "baseline_mean": float("nan"), "baseline_std": float("nan"),
                "full_digital_rate": float("nan")}
    rates = res.best_rates()
    return {
        **row,
        "status": res.status,
        "iterations": res.iterations,
        "converged_at": "" if res.converged_at is None else res.converged_at,
        "mahbf_rate": res.final_rate,
        "first_rate": rates[0] if rates else float("nan"),
        "baseline_mean": float(base.mean()),
        "baseline_std": float(base.std()),
        "full_digital_rate": ub,
    }


def _convergence_point(task: dict) -> dict:
    seed, r = task["seed"], task["realization"]
    H = _channel(task["channel"], seed, r)
    res = _episode(H, task["trainer"], seed, r)
    rates = res.best_rates()
    return {
        "case": task["case"],
        "seed": seed,
        "realization": r,
        "n_agents": task["trainer"]["n_agents"],
        "status": res.status,
        "iterations": res.iterations,
        "converged_at": "" if res.converged_at is None else res.converged_at,
        "first_rate": rates[0] if rates else float("nan"),
        "final_rate": res.final_rate,
        "trace": rates,
    }


def _timing_point(task: dict) -> dict:
    seed, r = task["seed"], task["realization"]
    H = _channel(task["channel"], seed, r)
    res = _episode(H, task["trainer"], seed, r)
    return {
        "n_agents": task["trainer"]["n_agents"],
        "seed": seed,
        "realization": r,
        "status": res.status,
        "iterations": res.iterations,
        "converged_at": "" if res.converged_at is None else res.converged_at,
        "final_rate": res.final_rate,
        "timing": res.timing,
    }


def _map(fn, tasks: list, workers: int) -> list:
    """Ordered map; results come back in task order regardless of completion order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


# ----------------------------------------------------------------- writers

def _header(spec: ExperimentSpec, command: str) -> str:
    lines = [
        f"# schema_version: {SCHEMA_VERSION}",
        f"# command: {command}",
        f"# rng: {RNG_VERSION}",
        f"# seeds: {json.dumps(spec.seeds)}",
        f"# spec: {json.dumps(spec.to_dict(), sort_keys=True)}",
    ]
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: str, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c, "")) for c in columns])
    path.write_text(buf.getvalue())


def _prepare_out(spec: ExperimentSpec) -> Path:
    out = Path(spec.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def _write_resolved(out: Path, spec: ExperimentSpec, command: str) -> None:
    payload = {"schema_version": SCHEMA_VERSION, "command": command, "rng": RNG_VERSION, "spec": spec.to_dict()}
    (out / f"{command}_config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def median_iterations(rows: list[dict]) -> float:
    """Median iterations-to-convergence; runs that never met the stopping rule count as ``inf``.

    Censored runs sort above every converged run, which keeps the median
    honest when fewer than half of the runs converge.
    """
    vals = [float(r["converged_at"]) if r["converged_at"] != "" else float("inf") for r in rows]
    if not vals:
        return float("nan")
    return float(np.median(vals))


# ---------------------------------------------------------------- commands

RATE_COLUMNS = ["point", "snr_db", "n_agents", "seed", "realization", "status", "iterations", "converged_at",
                "mahbf_rate", "first_rate", "baseline_mean", "baseline_std", "full_digital_rate"]
SUMMARY_COLUMNS = ["snr_db", "n_agents", "n", "failed", "mahbf_mean", "mahbf_std", "baseline_mean",
                   "baseline_std", "full_digital_mean", "full_digital_std", "first_mean"]


def _summarize(rows: list[dict], spec: ExperimentSpec) -> list[dict]:
    out = []
    for snr in spec.snr_grid:
        for y in spec.agent_counts:
            group = [r for r in rows if r["snr_db"] == snr and r["n_agents"] == y]
            ok = [r for r in group if r["status"] != "failed"]

            def stat(key, fn):
                return fn([r[key] for r in ok]) if ok else float("nan")

            out.append({
                "snr_db": snr, "n_agents": y, "n": len(group), "failed": len(group) - len(ok),
                "mahbf_mean": stat("mahbf_rate", np.mean), "mahbf_std": stat("mahbf_rate", np.std),
                "baseline_mean": stat("baseline_mean", np.mean), "baseline_std": stat("baseline_mean", np.std),
                "full_digital_mean": stat("full_digital_rate", np.mean),
                "full_digital_std": stat("full_digital_rate", np.std),
                "first_mean": stat("first_rate", np.mean),
            })
    return [{k: float(v) if isinstance(v, np.floating) else v for k, v in row.items()} for row in out]


def run_sweep(spec: ExperimentSpec) -> dict:
    """One episode per (SNR, Y, seed, realization) with baseline and upper bound."""
    out = _prepare_out(spec)
    tasks = []
    for snr in spec.snr_grid:
        for y in spec.agent_counts:
            for seed in spec.seeds:
                for r in range(spec.realizations):
                    tasks.append({"point": len(tasks), "snr_db": snr, "n_agents": y, "seed": seed,
                                  "realization": r, "channel": spec.channel.to_dict(),
                                  "trainer": spec.trainer.to_dict(), "baseline_draws": spec.baseline_draws})
    rows = _map(_sweep_point, tasks, spec.workers)
    summary = _summarize(rows, spec)
    header = _header(spec, "sweep")
    if spec.emit.get("rates_csv", True):
        _write_csv(out / "rates.csv", header, RATE_COLUMNS, rows)
        _write_csv(out / "rates_summary.csv", header, SUMMARY_COLUMNS, summary)
    _write_resolved(out, spec, "sweep")
    return {"rows": rows, "summary": summary, "ok": all(r["status"] != "failed" for r in rows)}


def run_convergence(spec: ExperimentSpec, cases: list[str] | None = None) -> dict:
    """Ablation runs at ``convergence_snr``: case1/2/3 with ``convergence_agents`` agents plus single-agent."""
    out = _prepare_out(spec)
    cases = list(cases or CASES)
    base = replace(spec.trainer, snr_db=spec.convergence_snr)
    if "case3" in cases and base.eta == 0.0:
        log.warning("eta is 0, so case3 coincides with case2")
    tasks = []
    for case in cases:
        trainer = case_config(base, case, spec.convergence_agents).to_dict()
        for seed in spec.seeds:
            for r in range(spec.realizations):
                tasks.append({"case": case, "seed": seed, "realization": r,
                              "channel": spec.channel.to_dict(), "trainer": trainer})
    rows = _map(_convergence_point, tasks, spec.workers)
    header = _header(spec, "converge")
    medians = {c: median_iterations([r for r in rows if r["case"] == c]) for c in cases}
    censored = {c: sum(1 for r in rows if r["case"] == c and r["converged_at"] == "") for c in cases}
    if spec.emit.get("trace_csv", True):
        labels = [f"{r['case']}_s{r['seed']}_r{r['realization']}" for r in rows]
        length = max((len(r["trace"]) for r in rows), default=0)
        trace_rows = []
        for t in range(length):
            row = {"iter": t + 1}
            for label, r in zip(labels, rows):
                row[label] = r["trace"][t] if t < len(r["trace"]) else ""
            trace_rows.append(row)
        _write_csv(out / "convergence_trace.csv", header, ["iter", *labels], trace_rows)
        cols = ["case", "seed", "realization", "n_agents", "status", "iterations", "converged_at",
                "first_rate", "final_rate"]
        _write_csv(out / "convergence.csv", header, cols, rows)
        summary = [{"case": c, "median_iterations_to_convergence": medians[c], "censored": censored[c],
                    "runs": sum(1 for r in rows if r["case"] == c)} for c in cases]
        _write_csv(out / "convergence_summary.csv", header,
                   ["case", "median_iterations_to_convergence", "censored", "runs"], summary)
    _write_resolved(out, spec, "converge")
    return {"rows": rows, "medians": medians, "censored": censored,
            "ok": all(r["status"] != "diverged" for r in rows)}


def hardware_descriptor() -> str:
    return (f"{platform.machine()} {platform.processor() or 'unknown-cpu'} cpus={os.cpu_count()} "
            f"{platform.system()} {platform.release()} python={platform.python_version()} numpy={np.__version__}")


def run_timing(spec: ExperimentSpec) -> dict:
    """Per-Y wall-clock split into act/env/update, and iterations to convergence.

    Wall-clock numbers depend on the machine and are not comparable with
    published GPU timings.
    """
    out = _prepare_out(spec)
    base = replace(spec.trainer, snr_db=spec.convergence_snr)
    tasks = []
    for y in spec.agent_counts:
        trainer = replace(base, n_agents=y).to_dict()
        for seed in spec.seeds:
            for r in range(spec.realizations):
                tasks.append({"seed": seed, "realization": r, "channel": spec.channel.to_dict(), "trainer": trainer})
    rows = _map(_timing_point, tasks, spec.workers)
    per_y = {}
    for y in spec.agent_counts:
        group = [r for r in rows if r["n_agents"] == y]
        per_y[str(y)] = {
            "median_iterations_to_convergence": median_iterations(group),
            "censored": sum(1 for r in group if r["converged_at"] == ""),
            "median_iterations_run": float(np.median([r["iterations"] for r in group])),
            "median_ms": {k: 1e3 * float(np.median([r["timing"][k] for r in group]))
                          for k in ("act", "env", "update", "total")},
        }
    header = _header(spec, "timing")
    cols = ["n_agents", "seed", "realization", "status", "iterations", "converged_at", "final_rate"]
    _write_csv(out / "timing.csv", header, cols, rows)
    if spec.emit.get("timing_json", True):
        payload = {
            "schema_version": SCHEMA_VERSION,
            "note": "wall-clock on this machine; not comparable to published absolute timings",
            "hardware": hardware_descriptor(),
            "spec": spec.to_dict(),
            "per_agents": per_y,
        }
        (out / "timing.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _write_resolved(out, spec, "timing")
    return {"rows": rows, "per_agents": per_y, "ok": all(r["status"] != "diverged" for r in rows)}


def load_config_file(path) -> dict:
    """Config files are JSON objects mirroring :meth:`ExperimentSpec.to_dict`."""
    d = json.loads(Path(path).read_text())
    if not isinstance(d, dict):
        raise ContractError("config file must hold a JSON object")
    return copy.deepcopy(d)
