"""Multi-agent DDPG search over analog precoder phases.

Each agent owns an actor (plus target) and a prioritized replay buffer;
one critic and one predictive network (plus targets) are shared.  The
environment for a fixed channel maps a phase vector to the ZF/water-filling
sum rate.

Learning quantities (rewards, Q-values, predictions) are kept in
normalized units, ``value = rate / value_scale``, so the tanh output heads
can represent them.  Traces report physical bits/s/Hz.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import neural
from .neural import Adam, DivergenceError, GradientSet, MlpParams
from .numerics import ContractError, RankDeficientError, Rng, frob_norm_diff, gram_schmidt_orthogonalize
from .precoding import (
    AnalogPrecoder,
    DegenerateGeometryError,
    HybridSolution,
    LinkConfig,
    RewardForm,
    full_digital_zf_rate,
    hybrid_zf_solution,
    wrap_phase,
)
from .replay import SumTree, Transition, agent_priorities, allocate_minibatch, compute_priority

__all__ = [
    "TrainerConfig",
    "Agent",
    "CentralNets",
    "Batch",
    "EpisodeResult",
    "init_agents",
    "init_central",
    "policy",
    "critic_q",
    "act",
    "env_step",
    "shape_reward",
    "critic_target",
    "critic_loss_grad",
    "predictive_loss_grad",
    "actor_objective_grad",
    "update_critic",
    "update_predictive",
    "update_actor",
    "select_best",
    "train_episode",
]

log = logging.getLogger(__name__)


class ConvergenceSignal(str, Enum):
    POLICY = "policy"  # noise-free actor output
    ACTION = "action"  # executed (noisy) action


@dataclass
class TrainerConfig:
    n_rf: int = 8
    snr_db: float = 5.0
    noise_power: float = 1.0
    n_agents: int = 2
    max_iters: int = 300
    gamma: float = 0.95
    tau: float = 1e-3
    tau_thres: float = 1e-4
    eta: float = 0.02
    delta: float = 1e-3
    minibatch: int = 32
    buffer_capacity: int = 500
    lr: float = 1e-3
    actor_lr: float | None = None
    critic_lr: float | None = None
    predictive_lr: float | None = None
    optimizer: str = "sgd"
    actor_optimizer: str | None = None
    critic_optimizer: str | None = None
    grad_clip: float | None = 1.0
    hidden: tuple[int, int] = (300, 200)
    noise_std: float = 0.3
    noise_decay: float = 0.995
    exploration: bool = True
    reward_form: RewardForm = RewardForm.P_OVER_SIGMA2
    prioritized: bool = True
    frequency_term: bool = True
    normalize_roots: bool = False
    coupled_gradients: bool = False
    value_scale: float | None = None
    convergence_signal: ConvergenceSignal = ConvergenceSignal.POLICY
    critic_final_init: float | None = 3e-3
    updates_per_iter: int = 1
    actor_final_init: float | None = None
    init_retries: int = 10

    def __post_init__(self):
        self.reward_form = RewardForm(self.reward_form)
        self.convergence_signal = ConvergenceSignal(self.convergence_signal)
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError("gamma must lie in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ContractError("tau must lie in (0, 1]")
        if self.eta < 0 or self.delta <= 0:
            raise ContractError("eta must be >= 0 and delta > 0")
        if self.n_agents < 1 or self.max_iters < 1 or self.minibatch < 1:
            raise ContractError("n_agents, max_iters and minibatch must be positive")
        for opt in (self.optimizer, self.actor_optimizer, self.critic_optimizer):
            if opt not in ("sgd", "adam", None):
                raise ContractError(f"unknown optimizer {opt!r}")

    @property
    def link(self) -> LinkConfig:
        return LinkConfig(n_rf=self.n_rf, snr_db=self.snr_db, noise_power=self.noise_power)

    def lr_for(self, net: str) -> float:
        return getattr(self, f"{net}_lr") or self.lr

    def optimizer_for(self, net: str) -> str:
        """Actor uses ``actor_optimizer``; critic and predictive share ``critic_optimizer``."""
        own = self.actor_optimizer if net == "actor" else self.critic_optimizer
        return own or self.optimizer

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reward_form"] = self.reward_form.value
        d["convergence_signal"] = self.convergence_signal.value
        d["hidden"] = list(self.hidden)
        return d


class _Learner:
    """Network parameters plus their optimizer state."""

    def __init__(self, params: MlpParams, optimizer: str):
        self.params = params
        self.adam = Adam(params) if optimizer == "adam" else None

    def step(self, grads: GradientSet, lr: float, clip: float | None) -> None:
        grads = neural.clip_by_global_norm(grads, clip)
        if self.adam is not None:
            self.params = self.adam.step(self.params, grads, lr)
        else:
            self.params = neural.sgd_step(self.params, grads, lr)


@dataclass
class Agent:
    index: int
    actor: _Learner
    target_actor: MlpParams
    buffer: SumTree
    state: np.ndarray
    analog: AnalogPrecoder
    last_policy: np.ndarray | None = None


@dataclass
class CentralNets:
    critic: _Learner
    target_critic: MlpParams
    predictive: _Learner
    target_predictive: MlpParams  # soft-updated but never read


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    agent: np.ndarray  # owning agent of each row
    weights: np.ndarray  # q_i of the owning agent
    leaves: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass
class EpisodeResult:
    status: str  # "converged" | "max_iters" | "diverged"
    iterations: int
    converged_at: int | None
    trace: list[dict]
    solution: HybridSolution | None
    best_agent: int | None
    value_scale: float
    timing: dict
    message: str = ""

    @property
    def final_rate(self) -> float:
        return float("nan") if self.solution is None else self.solution.sum_rate

    def best_rates(self) -> list[float]:
        return [row["best_rate"] for row in self.trace]

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "converged_at": self.converged_at,
            "best_agent": self.best_agent,
            "value_scale": self.value_scale,
            "timing": self.timing,
            "message": self.message,
            "trace": self.trace,
            "solution": None if self.solution is None else self.solution.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# ---------------------------------------------------------------- networks

def _dims(cfg: TrainerConfig, n_tx: int):
    d = n_tx * cfg.n_rf
    return [d, *cfg.hidden, d], [2 * d, *cfg.hidden, 1]


def policy(actor: MlpParams, states: np.ndarray) -> np.ndarray:
    """Deterministic actor map: phases in, phases in ``(-pi, pi)`` out."""
    return np.pi * neural.forward(actor, np.asarray(states) / np.pi)


def _sa_input(states, actions) -> np.ndarray:
    return np.concatenate([np.asarray(states), np.asarray(actions)], axis=-1) / np.pi


def critic_q(net: MlpParams, states, actions) -> np.ndarray:
    """Q-value (or prediction) per row, normalized units."""
    return neural.forward(net, _sa_input(states, actions))[..., 0]


def init_central(cfg: TrainerConfig, n_tx: int, rng: Rng) -> CentralNets:
    _, c_dims = _dims(cfg, n_tx)
    critic = neural.init_mlp(c_dims, rng, final_bound=cfg.critic_final_init)
    predictive = neural.init_mlp(c_dims, rng, final_bound=cfg.critic_final_init)
    opt = cfg.optimizer_for("critic")
    return CentralNets(_Learner(critic, opt), critic.copy(), _Learner(predictive, opt), predictive.copy())


def _orthogonal_phase_states(n_agents: int, n_tx: int, n_rf: int, rng: Rng, retries: int):
    """Random complex F_RF draws, Gram-Schmidt on their vecs, keep phases.

    Returns the phase states and the pre-projection orthogonal vectors.
    """
    d = n_tx * n_rf
    if n_agents > d:
        raise ContractError(f"{n_agents} agents cannot be orthogonal in dimension {d}")
    for _ in range(retries):
        raw = [rng.complex_normal(d) for _ in range(n_agents)]
        try:
            ortho = gram_schmidt_orthogonalize(raw)
        except RankDeficientError:
            continue
        return [wrap_phase(np.angle(v)) for v in ortho], ortho
    raise RankDeficientError(f"orthogonal initialization failed after {retries} draws")


def init_agents(cfg: TrainerConfig, n_tx: int, rng: Rng) -> list[Agent]:
    a_dims, _ = _dims(cfg, n_tx)
    states, _ = _orthogonal_phase_states(cfg.n_agents, n_tx, cfg.n_rf, rng, cfg.init_retries)
    agents = []
    for i, s in enumerate(states):
        actor = neural.init_mlp(a_dims, rng, final_bound=cfg.actor_final_init)
        agents.append(Agent(
            index=i,
            actor=_Learner(actor, cfg.optimizer_for("actor")),
            target_actor=actor.copy(),
            buffer=SumTree(cfg.buffer_capacity),
            state=s,
            analog=AnalogPrecoder.from_vec(s, n_tx, cfg.n_rf),
        ))
    return agents


# ------------------------------------------------------------ environment

def act(agent: Agent, noise_std: float, rng: Rng | None) -> np.ndarray:
    a = policy(agent.actor.params, agent.state)
    if noise_std > 0:
        a = a + rng.normal(a.shape, noise_std)
    return wrap_phase(a)


def env_step(H: np.ndarray, action: np.ndarray, cfg: TrainerConfig) -> tuple[float, HybridSolution]:
    """Reward of one phase vector; a singular effective channel earns 0."""
    analog = AnalogPrecoder.from_vec(action, H.shape[1], cfg.n_rf)
    try:
        sol = hybrid_zf_solution(H, analog, cfg.link, cfg.reward_form)
    except DegenerateGeometryError:
        sol = HybridSolution(analog, np.zeros((cfg.n_rf, H.shape[0]), dtype=np.complex128),
                             None, 0.0, degenerate=True)
    return sol.sum_rate, sol


def shape_reward(raw: float, sigma_pred: float, eta: float) -> float:
    if eta < 0:
        raise ContractError("eta must be nonnegative")
    return raw + eta * sigma_pred


def critic_target(reward, next_state, target_actor: MlpParams, target_critic: MlpParams, gamma: float):
    """``r + gamma Q'(s', A'(s'))`` for one transition or a batch of them."""
    next_action = policy(target_actor, next_state)
    return reward + gamma * critic_q(target_critic, next_state, next_action)


# ---------------------------------------------------------------- losses

def critic_loss_grad(critic: MlpParams, batch: Batch, targets: np.ndarray):
    """Weighted squared TD loss ``(1/M) sum q_i (Q - y)^2`` and its gradient."""
    x = _sa_input(batch.states, batch.actions)
    q = neural.forward(critic, x)[:, 0]
    m = len(batch)
    err = q - targets
    loss = float(np.sum(batch.weights * err**2) / m)
    grads = neural.backward(critic, x, (2.0 * batch.weights * err / m)[:, None])
    return loss, grads


def predictive_loss_grad(predictive: MlpParams, batch: Batch, q_targets: np.ndarray):
    """``(1/M) sum q_i (Q - sigma)^2`` with ``Q`` held constant."""
    x = _sa_input(batch.states, batch.actions)
    sigma = neural.forward(predictive, x)[:, 0]
    m = len(batch)
    err = q_targets - sigma
    loss = float(np.sum(batch.weights * err**2) / m)
    grads = neural.backward(predictive, x, (-2.0 * batch.weights * err / m)[:, None])
    return loss, grads


def actor_objective_grad(actor: MlpParams, critic: MlpParams, states: np.ndarray, q_i: float):
    """``(q_i/M_i) sum -Q(s, A(s))`` and its gradient in the actor parameters.

    The critic is only differentiated with respect to its action input.
    """
    states = np.atleast_2d(states)
    m = len(states)
    actions = policy(actor, states)
    x = _sa_input(states, actions)
    q = neural.forward(critic, x)[:, 0]
    objective = float(-q_i * np.sum(q) / m)
    d_in = neural.backward(critic, x, np.full((m, 1), -q_i / m)).input
    d = states.shape[1]
    # d x_a / d a = 1/pi and d a / d(tanh out) = pi cancel
    d_tanh = d_in[:, d:]
    grads = neural.backward(actor, states / np.pi, d_tanh)
    return objective, GradientSet(grads.weights, grads.biases)


def _check_finite(loss: float, what: str) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite {what} loss")


def update_critic(nets: CentralNets, batch: Batch, targets: np.ndarray, cfg: TrainerConfig,
                  extra_grads: GradientSet | None = None) -> float:
    loss, grads = critic_loss_grad(nets.critic.params, batch, targets)
    _check_finite(loss, "critic")
    if extra_grads is not None:
        grads = GradientSet([a + b for a, b in zip(grads.weights, extra_grads.weights)],
                            [a + b for a, b in zip(grads.biases, extra_grads.biases)])
    nets.critic.step(grads, cfg.lr_for("critic"), cfg.grad_clip)
    return loss


def update_predictive(nets: CentralNets, batch: Batch, q_targets: np.ndarray, cfg: TrainerConfig) -> float:
    loss, grads = predictive_loss_grad(nets.predictive.params, batch, q_targets)
    _check_finite(loss, "predictive")
    nets.predictive.step(grads, cfg.lr_for("predictive"), cfg.grad_clip)
    return loss


def update_actor(agent: Agent, nets: CentralNets, states: np.ndarray, q_i: float, cfg: TrainerConfig) -> float:
    if len(states) == 0:
        raise ContractError("actor update needs at least one sample")
    objective, grads = actor_objective_grad(agent.actor.params, nets.critic.params, states, q_i)
    if not (np.isfinite(objective) and grads.is_finite()):
        log.warning("skipping actor %d update: non-finite gradient", agent.index)
        return objective
    agent.actor.step(grads, cfg.lr_for("actor"), cfg.grad_clip)
    return objective


def select_best(q_values) -> int:
    """Index of the largest Q-value, lowest index on ties."""
    return int(np.argmax(np.asarray(q_values)))


# ----------------------------------------------------------------- episode

def _sample_batch(agents: list[Agent], cfg: TrainerConfig, rng: Rng) -> Batch | None:
    occupancy = [len(a.buffer) for a in agents]
    if cfg.prioritized:
        roots = [a.buffer.root for a in agents]
        q = agent_priorities(roots, occupancy if cfg.normalize_roots else None)
    else:
        q = np.full(len(agents), 1.0 / len(agents))
    counts = allocate_minibatch(q, cfg.minibatch, occupancy)
    rows, leaves, owner = [], [], []
    for agent, n in zip(agents, counts):
        for leaf, tr in agent.buffer.sample(int(n), rng, uniform=not cfg.prioritized):
            rows.append(tr)
            leaves.append((agent.index, leaf))
            owner.append(agent.index)
    if not rows:
        return None
    owner = np.asarray(owner)
    return Batch(
        states=np.stack([t.state for t in rows]),
        actions=np.stack([t.action for t in rows]),
        rewards=np.array([t.reward for t in rows]),
        next_states=np.stack([t.next_state for t in rows]),
        agent=owner,
        weights=q[owner],
        leaves=leaves,
    )


def _priority(cfg: TrainerConfig, td: float, tr_access: float, total_access: float) -> float:
    if not cfg.prioritized:
        return 1.0
    freq = tr_access if cfg.frequency_term else 0.0
    return compute_priority(td, 0.0, freq, total_access, cfg.delta)


def _learn(agents: list[Agent], nets: CentralNets, cfg: TrainerConfig, rng: Rng) -> dict:
    batch = _sample_batch(agents, cfg, rng)
    if batch is None:
        return {}
    targets = np.empty(len(batch))
    for agent in agents:
        rows = batch.agent == agent.index
        if np.any(rows):
            targets[rows] = critic_target(batch.rewards[rows], batch.next_states[rows],
                                          agent.target_actor, nets.target_critic, cfg.gamma)
    q_before = critic_q(nets.critic.params, batch.states, batch.actions)
    extra = None
    if cfg.coupled_gradients:
        # predictive loss also pulls the critic toward the prediction
        x = _sa_input(batch.states, batch.actions)
        sigma = critic_q(nets.predictive.params, batch.states, batch.actions)
        g = 2.0 * batch.weights * (q_before - sigma) / len(batch)
        extra = neural.backward(nets.critic.params, x, g[:, None])
        extra = GradientSet(extra.weights, extra.biases)
    critic_loss = update_critic(nets, batch, targets, cfg, extra)
    pred_loss = update_predictive(nets, batch, q_before, cfg)
    for agent in agents:
        rows = batch.agent == agent.index
        if np.any(rows):
            update_actor(agent, nets, batch.states[rows], float(batch.weights[rows][0]), cfg)

    # refresh priorities of the replayed transitions with the new critic
    q_after = critic_q(nets.critic.params, batch.states, batch.actions)
    for (ai, leaf), qv in zip(batch.leaves, q_after):
        buf = agents[ai].buffer
        tr = buf.data[leaf]
        tr.td_error = abs(float(qv) - tr.reward)
        buf.update(leaf, _priority(cfg, tr.td_error, tr.access_count, buf.total_access))

    nets.target_critic = neural.soft_update(nets.target_critic, nets.critic.params, cfg.tau)
    nets.target_predictive = neural.soft_update(nets.target_predictive, nets.predictive.params, cfg.tau)
    for agent in agents:
        agent.target_actor = neural.soft_update(agent.target_actor, agent.actor.params, cfg.tau)
    return {"critic_loss": critic_loss, "predictive_loss": pred_loss, "batch": len(batch)}


def _value_scale(H: np.ndarray, cfg: TrainerConfig) -> float:
    if cfg.value_scale is not None:
        return float(cfg.value_scale)
    # upper bound of any reward, discounted, with headroom below the tanh limit
    try:
        bound = full_digital_zf_rate(H, cfg.link.noise_powers(H.shape[0]), cfg.link.p_total)
    except DegenerateGeometryError:
        bound = 1.0
    if cfg.reward_form is RewardForm.P_SQUARED:
        bound = max(bound, 1.0) * 2.0
    effective = max(1.0 - cfg.gamma - cfg.eta, 0.25 * (1.0 - cfg.gamma))
    return 1.25 * max(bound, 1e-6) / effective


def train_episode(H: np.ndarray, cfg: TrainerConfig, rng: Rng) -> EpisodeResult:
    """Run the multi-agent search on one channel realization.

    Per iteration: act, evaluate rewards, query critic and predictive
    networks, shape and store, learn from a prioritized minibatch,
    soft-update targets, then test the per-agent precoder step against
    ``tau_thres`` (all agents must be below it to stop).
    """
    H = np.asarray(H)
    n_tx = H.shape[1]
    if H.shape[0] > cfg.n_rf:
        raise ContractError(f"{H.shape[0]} users exceed {cfg.n_rf} RF chains")
    scale = _value_scale(H, cfg)
    t_start = time.perf_counter()
    agents = init_agents(cfg, n_tx, rng)
    nets = init_central(cfg, n_tx, rng)
    for agent in agents:
        agent.last_policy = agent.analog.matrix
    noise_rng = rng.spawn(rng.stream + 1)
    timing = {"act": 0.0, "env": 0.0, "update": 0.0}
    trace: list[dict] = []
    status, converged_at, message = "max_iters", None, ""
    solutions: list[HybridSolution] = []
    q_values = np.zeros(len(agents))
    noise = cfg.noise_std if cfg.exploration else 0.0

    for t in range(1, cfg.max_iters + 1):
        t0 = time.perf_counter()
        greedy = [act(a, 0.0, None) for a in agents]
        if noise > 0:
            actions = [wrap_phase(g + noise_rng.normal(g.shape, noise)) for g in greedy]
        else:
            actions = greedy
        t1 = time.perf_counter()
        rewards, greedy_solutions = [], []
        for a, g in zip(actions, greedy):
            r, sol = env_step(H, a, cfg)
            rewards.append(r)
            greedy_solutions.append(env_step(H, g, cfg)[1] if noise > 0 else sol)
        t2 = time.perf_counter()

        states = np.stack([a.state for a in agents])
        q_exec = critic_q(nets.critic.params, states, np.stack(actions))
        q_values = critic_q(nets.critic.params, states, np.stack(greedy))
        sigmas = critic_q(nets.predictive.params, states, np.stack(actions))
        shaped = []
        for agent, a, r, qv, sg in zip(agents, actions, rewards, q_exec, sigmas):
            rbar = shape_reward(r / scale, float(sg), cfg.eta)
            shaped.append(rbar)
            td = abs(float(qv) - rbar)
            buf = agent.buffer
            tr = Transition(agent.state.copy(), a.copy(), rbar, a.copy(),
                            _priority(cfg, td, 0, buf.total_access), born_iter=t, td_error=td)
            buf.push(tr)
        solutions = greedy_solutions
        try:
            for _ in range(cfg.updates_per_iter):
                stats = _learn(agents, nets, cfg, rng)
        except DivergenceError as exc:
            status, message = "diverged", str(exc)
            log.warning("episode diverged at iteration %d: %s", t, exc)
            break
        t3 = time.perf_counter()

        steps = []
        for agent, a, g in zip(agents, actions, greedy):
            signal = g if cfg.convergence_signal is ConvergenceSignal.POLICY else a
            F = AnalogPrecoder.from_vec(signal, n_tx, cfg.n_rf).matrix
            steps.append(frob_norm_diff(F, agent.last_policy))
            agent.last_policy = F
            agent.state = a
            agent.analog = AnalogPrecoder.from_vec(a, n_tx, cfg.n_rf)
        best = select_best(q_values)
        timing["act"] += t1 - t0
        timing["env"] += t2 - t1
        timing["update"] += t3 - t2
        trace.append({
            "iter": t,
            "raw_reward": [float(r) for r in rewards],
            "shaped_reward": [float(x * scale) for x in shaped],
            "policy_rate": [sol.sum_rate for sol in greedy_solutions],
            "q": [float(q * scale) for q in q_values],
            "best_q": float(q_values[best] * scale),
            "best_agent": best,
            "best_rate": greedy_solutions[best].sum_rate,
            "frob_step": steps,
            "noise_std": noise,
            **{k: float(v) for k, v in stats.items()},
        })
        if cfg.exploration:
            noise *= cfg.noise_decay
        if all(x < cfg.tau_thres for x in steps):
            status, converged_at = "converged", t
            break

    timing["total"] = time.perf_counter() - t_start
    best_agent = select_best(q_values) if solutions else None
    solution = solutions[best_agent] if solutions else None
    return EpisodeResult(status, len(trace), converged_at, trace, solution, best_agent,
                         scale, timing, message)
