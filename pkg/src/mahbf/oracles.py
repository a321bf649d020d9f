"""Brute-force verification suites behind ``mahbf oracle``.

Each suite returns an :class:`OracleReport`; ``passed`` is the verdict and
``metrics`` holds the worst-case numbers that produced it.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import chisquare

from . import neural
from .channel import ChannelConfig, generate_channel
from .madrl import Batch, actor_objective_grad, critic_loss_grad, predictive_loss_grad
from .numerics import Rng
from .precoding import (
    AnalogPrecoder,
    LinkConfig,
    general_sum_rate,
    hybrid_zf_solution,
    water_filling,
    zf_digital,
    zf_sum_rate,
)
from .replay import SumTree, Transition

__all__ = [
    "OracleReport",
    "zf_suite",
    "water_filling_suite",
    "gradient_suite",
    "sum_tree_suite",
    "run_all",
]


@dataclass
class OracleReport:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        shown = ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.metrics.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {shown} ({self.seconds:.2f}s)"


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        report = fn(*args, **kwargs)
        report.seconds = time.perf_counter() - t0
        return report
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def zf_suite(instances: int = 500, seed: int = 0, n_tx: int = 16, n_users: int = 4, n_rf: int = 4,
             tol: float = 1e-8) -> OracleReport:
    """ZF residual ``||H F_RF F_D~ - I||_F`` and ZF-vs-SINR rate agreement."""
    rng = Rng(seed)
    cfg = ChannelConfig(n_tx=n_tx, n_users=n_users)
    link = LinkConfig(n_rf=n_rf, snr_db=5.0)
    worst_resid, worst_rate = 0.0, 0.0
    for _ in range(instances):
        H = generate_channel(cfg, rng)
        analog = AnalogPrecoder(rng.uniform((n_tx, n_rf), -np.pi, np.pi))
        sol = hybrid_zf_solution(H, analog, link)
        resid = np.linalg.norm(H @ analog.matrix @ zf_digital(H, analog) - np.eye(n_users))
        rate_gap = abs(general_sum_rate(H, analog, sol.digital, link.noise_powers(n_users)) - sol.sum_rate)
        worst_resid = max(worst_resid, float(resid))
        worst_rate = max(worst_rate, rate_gap)
    return OracleReport("zf", worst_resid < tol and worst_rate < tol,
                        {"instances": instances, "max_residual": worst_resid, "max_rate_gap": worst_rate})


def bisection_water_level(y: np.ndarray, s: np.ndarray, p_total: float) -> float:
    """Water level from root-finding the budget equation, independent of the sort-based solver."""
    def excess(mu):
        return float(np.sum(y * np.maximum(mu / y - s, 0.0)) - p_total)
    hi = p_total + float(np.max(y * s)) * len(y) + 1.0
    return brentq(excess, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)


@_timed
def water_filling_suite(instances: int = 200, trials: int = 1000, seed: int = 1,
                        tol: float = 1e-9) -> OracleReport:
    """Water-filling vs bisection on the water level, and vs random feasible allocations."""
    rng = Rng(seed)
    worst_gap, losses = 0.0, 0
    for _ in range(instances):
        k = 1 + int(rng.uniform() * 8)
        y = np.exp(rng.uniform(k, -3, 3))
        s = np.exp(rng.uniform(k, -1, 1))
        p_total = float(10 ** rng.uniform(low=-1, high=2))
        pa = water_filling(y, s, p_total)
        mu = bisection_water_level(y, s, p_total)
        ref = np.maximum(mu / y - s, 0.0)
        gap = float(np.max(np.abs(pa.powers - ref)) / max(1.0, p_total))
        worst_gap = max(worst_gap, gap)
        best = zf_sum_rate(pa)
        w = rng.uniform((trials, k))
        p = p_total * w / (w @ y)[:, None]
        rates = np.sum(np.log2(1.0 + p / s), axis=1)
        losses += int(np.sum(rates > best + 1e-12))
    return OracleReport("water_filling", worst_gap < tol and losses == 0,
                        {"instances": instances, "max_power_gap": worst_gap, "random_wins": losses})


def _fd_grad(f, theta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = eps
        g[i] = (f(theta + step) - f(theta - step)) / (2 * eps)
    return g


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


@_timed
def gradient_suite(nets: int = 20, seed: int = 2, tol: float = 1e-6) -> OracleReport:
    """Central differences vs backprop for critic, predictive and actor-through-critic losses."""
    rng = Rng(seed)
    worst = {"critic": 0.0, "predictive": 0.0, "actor": 0.0}
    for _ in range(nets):
        d = 2 + int(rng.uniform() * 3)
        h1, h2 = 2 + int(rng.uniform() * 4), 2 + int(rng.uniform() * 4)
        actor = neural.init_mlp([d, h1, h2, d], rng)
        critic = neural.init_mlp([2 * d, h1, h2, 1], rng)
        pred = neural.init_mlp([2 * d, h1, h2, 1], rng)
        m = 4
        owner = np.arange(m) % 2
        batch = Batch(
            states=rng.uniform((m, d), -np.pi, np.pi),
            actions=rng.uniform((m, d), -np.pi, np.pi),
            rewards=rng.uniform(m),
            next_states=rng.uniform((m, d), -np.pi, np.pi),
            agent=owner,
            weights=np.array([0.4, 0.6])[owner],
        )
        y = rng.uniform(m, -0.5, 0.5)
        g = critic_loss_grad(critic, batch, y)[1].flat()
        fd = _fd_grad(lambda th: critic_loss_grad(critic.with_flat(th), batch, y)[0], critic.flat())
        worst["critic"] = max(worst["critic"], _rel(g, fd))
        g = predictive_loss_grad(pred, batch, y)[1].flat()
        fd = _fd_grad(lambda th: predictive_loss_grad(pred.with_flat(th), batch, y)[0], pred.flat())
        worst["predictive"] = max(worst["predictive"], _rel(g, fd))
        g = actor_objective_grad(actor, critic, batch.states, 0.7)[1].flat()
        fd = _fd_grad(lambda th: actor_objective_grad(actor.with_flat(th), critic, batch.states, 0.7)[0],
                      actor.flat())
        worst["actor"] = max(worst["actor"], _rel(g, fd))
    metrics = {"nets": nets, **{f"max_rel_{k}": v for k, v in worst.items()}}
    return OracleReport("gradients", max(worst.values()) < tol, metrics)


@_timed
def sum_tree_suite(operations: int = 10_000, draws: int = 100_000, seed: int = 3,
                   p_min: float = 1e-3) -> OracleReport:
    """Sum-tree vs a plain list under random push/update, then a chi-square sampling test."""
    rng = Rng(seed)
    tree = SumTree(37)
    ref = np.zeros(37)
    worst, misses = 0.0, 0
    ops = rng.uniform((operations, 3))
    blank = np.zeros(1)
    for kind, a, b in ops:
        p = float(b * 5.0)
        if kind < 0.5 or tree.size == 0:
            ref[tree.cursor] = p
            tree.push(Transition(blank, blank, 0.0, blank, p))
        else:
            i = int(a * tree.size)
            ref[i] = p
            tree.update(i, p)
        worst = max(worst, abs(tree.root - ref.sum()) / max(1.0, ref.sum()))
        if tree.root > 0:
            v = a * tree.root
            misses += tree.find(v) != int(np.searchsorted(np.cumsum(ref), v, side="right"))
    leaf_err = float(np.max(np.abs(tree.priorities() - ref)))
    consistent = worst < 1e-9 and leaf_err == 0.0 and misses == 0

    probe = SumTree(10)
    weights = np.arange(1.0, 11.0)
    for w in weights:
        probe.push(Transition(blank, blank, 0.0, blank, float(w)))
    picks = [i for i, _ in probe.sample(draws, rng)]
    counts = np.bincount(picks, minlength=10)
    pvalue = float(chisquare(counts, draws * weights / weights.sum()).pvalue)
    return OracleReport("sum_tree", consistent and pvalue > p_min,
                        {"operations": operations, "max_root_drift": worst, "find_mismatches": misses, "draws": draws, "chi2_p": pvalue})


def run_all(seed: int = 0) -> list[OracleReport]:
    return [
        zf_suite(seed=seed),
        water_filling_suite(seed=seed + 1),
        gradient_suite(seed=seed + 2),
        sum_tree_suite(seed=seed + 3),
    ]
