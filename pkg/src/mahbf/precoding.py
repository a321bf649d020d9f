"""Zero-forcing hybrid precoding, water-filling and sum-rate evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .numerics import ContractError, Rng, SingularSystemError, solve_hermitian

__all__ = [
    "RewardForm",
    "DegenerateGeometryError",
    "LinkConfig",
    "AnalogPrecoder",
    "PowerAllocation",
    "HybridSolution",
    "wrap_phase",
    "zf_digital",
    "water_filling",
    "assemble_digital",
    "effective_gains",
    "zf_sum_rate",
    "general_sum_rate",
    "full_digital_zf_rate",
    "hybrid_zf_solution",
    "random_phase_baseline",
]


class RewardForm(str, Enum):
    P_OVER_SIGMA2 = "p_over_sigma2"  # log2(1 + p/sigma^2)
    P_SQUARED = "p_squared"  # log2(1 + p^2/sigma^2), the printed variant


class DegenerateGeometryError(SingularSystemError):
    """Effective channel ``H F_RF`` is rank deficient or too ill-conditioned."""


@dataclass
class LinkConfig:
    """RF-chain count and SNR; ``P_t = noise_power * 10**(snr_db/10)``."""

    n_rf: int = 8
    snr_db: float = 5.0
    noise_power: float = 1.0

    @property
    def p_total(self) -> float:
        return self.noise_power * 10.0 ** (self.snr_db / 10.0)

    def noise_powers(self, n_users: int) -> np.ndarray:
        return np.full(n_users, self.noise_power)


def wrap_phase(x):
    """Map angles into ``(-pi, pi]``; values already in range pass through unchanged."""
    x = np.asarray(x, dtype=np.float64)
    inside = (x > -np.pi) & (x <= np.pi)
    return np.where(inside, x, np.pi - np.mod(np.pi - x, 2.0 * np.pi))


@dataclass
class AnalogPrecoder:
    phases: np.ndarray  # (n_tx, n_rf), radians

    def __post_init__(self):
        self.phases = wrap_phase(self.phases)
        if self.phases.ndim != 2:
            raise ContractError("phases must be an n_tx x n_rf matrix")

    @property
    def matrix(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def shape(self):
        return self.phases.shape

    def vec(self) -> np.ndarray:
        """Column-stacked phase vector."""
        return self.phases.ravel(order="F").copy()

    @classmethod
    def from_vec(cls, v, n_tx: int, n_rf: int) -> "AnalogPrecoder":
        v = np.asarray(v, dtype=np.float64)
        if v.size != n_tx * n_rf:
            raise ContractError(f"phase vector of length {v.size} != {n_tx}*{n_rf}")
        return cls(v.reshape((n_tx, n_rf), order="F"))


@dataclass
class PowerAllocation:
    powers: np.ndarray
    mu: float
    effective_gains: np.ndarray
    noise_powers: np.ndarray

    def budget_used(self) -> float:
        return float(np.dot(self.effective_gains, self.powers))


@dataclass
class HybridSolution:
    analog: AnalogPrecoder
    digital: np.ndarray  # (n_rf, K)
    power: PowerAllocation | None
    sum_rate: float
    degenerate: bool = False
    extra: dict = field(default_factory=dict)

    def total_power(self) -> float:
        F = self.analog.matrix @ self.digital
        return float(np.real(np.trace(F.conj().T @ F)))

    def to_dict(self) -> dict:
        d = {
            "phases": self.analog.phases.tolist(),
            "digital": {"re": self.digital.real.tolist(), "im": self.digital.imag.tolist()},
            "powers": None if self.power is None else self.power.powers.tolist(),
            "sum_rate": self.sum_rate,
            "degenerate": self.degenerate,
        }
        d.update(self.extra)
        return d


def _as_matrix(f_rf) -> np.ndarray:
    return f_rf.matrix if isinstance(f_rf, AnalogPrecoder) else np.asarray(f_rf)


def zf_digital(H: np.ndarray, f_rf) -> np.ndarray:
    """Minimum-norm ZF digital precoder ``F_RF^H H^H (H F_RF F_RF^H H^H)^-1``.

    Raises :class:`DegenerateGeometryError` when ``H F_RF`` is not safely
    full row rank.
    """
    F = _as_matrix(f_rf)
    H = np.asarray(H)
    if H.shape[1] != F.shape[0]:
        raise ContractError(f"channel {H.shape} incompatible with analog precoder {F.shape}")
    if H.shape[0] > F.shape[1]:
        raise ContractError(f"{H.shape[0]} users exceed {F.shape[1]} RF chains")
    HF = H @ F
    try:
        # (G^-1 HF)^H == HF^H G^-1 since G is Hermitian
        return solve_hermitian(HF @ HF.conj().T, HF).conj().T
    except SingularSystemError as exc:
        raise DegenerateGeometryError(str(exc)) from exc


def effective_gains(f_tilde: np.ndarray, f_rf) -> np.ndarray:
    """Diagonal of ``F~^H F_RF^H F_RF F~``: squared column norms of ``F_RF F~``."""
    F = _as_matrix(f_rf)
    if F.shape[1] != f_tilde.shape[0]:
        raise ContractError(f"analog {F.shape} incompatible with digital {f_tilde.shape}")
    B = F @ f_tilde
    return np.sum(np.abs(B) ** 2, axis=0)


def water_filling(gains, noise_powers, p_total: float) -> PowerAllocation:
    """Maximize ``sum log2(1 + p_k/s_k)`` subject to ``sum y_k p_k <= P_t``.

    The optimum is ``p_k = (mu/y_k - s_k)^+``.  User ``k`` is active iff
    ``mu > y_k s_k``; with users sorted by that threshold the water level of
    the ``n`` cheapest ones is ``(P_t + sum y s)/n``.  The largest ``n``
    whose level clears its own last threshold is the active set.
    """
    y = np.asarray(gains, dtype=np.float64)
    s = np.asarray(noise_powers, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ContractError("gains and noise_powers must be equal-length vectors")
    if np.any(y <= 0) or np.any(s <= 0) or p_total <= 0:
        raise ContractError("gains, noise powers and budget must be positive")
    thresholds = y * s
    order = np.argsort(thresholds, kind="stable")
    csum = np.cumsum(thresholds[order])
    mu = p_total + csum[0]
    for n in range(len(y), 0, -1):
        level = (p_total + csum[n - 1]) / n
        if level > thresholds[order[n - 1]]:
            mu = level
            break
    powers = np.maximum(mu / y - s, 0.0)
    return PowerAllocation(powers=powers, mu=float(mu), effective_gains=y, noise_powers=s)


def assemble_digital(f_tilde: np.ndarray, power: PowerAllocation) -> np.ndarray:
    p = np.asarray(power.powers if isinstance(power, PowerAllocation) else power)
    if f_tilde.shape[1] != p.size:
        raise ContractError(f"{p.size} powers for {f_tilde.shape[1]} columns")
    return f_tilde * np.sqrt(p)[None, :]


def zf_sum_rate(power: PowerAllocation, reward_form: RewardForm = RewardForm.P_OVER_SIGMA2) -> float:
    p = power.powers
    if RewardForm(reward_form) is RewardForm.P_SQUARED:
        p = p**2
    return float(np.sum(np.log2(1.0 + p / power.noise_powers)))


def general_sum_rate(H: np.ndarray, f_rf, f_d: np.ndarray, noise_powers) -> float:
    """Sum of per-user SINR rates with full inter-user interference."""
    G = np.asarray(H) @ _as_matrix(f_rf) @ np.asarray(f_d)
    power = np.abs(G) ** 2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    return float(np.sum(np.log2(1.0 + signal / (np.asarray(noise_powers) + interference))))


def full_digital_zf_rate(H: np.ndarray, noise_powers, p_total: float) -> float:
    """Rate of pseudo-inverse ZF with water-filling over its column norms."""
    H = np.asarray(H)
    try:
        F = solve_hermitian(H @ H.conj().T, H).conj().T
    except SingularSystemError as exc:
        raise DegenerateGeometryError(str(exc)) from exc
    gains = np.sum(np.abs(F) ** 2, axis=0)
    return zf_sum_rate(water_filling(gains, noise_powers, p_total))


def hybrid_zf_solution(H: np.ndarray, analog: AnalogPrecoder, link: LinkConfig,
                       reward_form: RewardForm = RewardForm.P_OVER_SIGMA2) -> HybridSolution:
    """ZF digital stage + water-filling for a fixed analog precoder."""
    f_tilde = zf_digital(H, analog)
    noise = link.noise_powers(H.shape[0])
    power = water_filling(effective_gains(f_tilde, analog), noise, link.p_total)
    return HybridSolution(
        analog=analog,
        digital=assemble_digital(f_tilde, power),
        power=power,
        sum_rate=zf_sum_rate(power, reward_form),
    )


def random_phase_baseline(H: np.ndarray, link: LinkConfig, rng: Rng,
                          reward_form: RewardForm = RewardForm.P_OVER_SIGMA2) -> HybridSolution:
    phases = rng.uniform((H.shape[1], link.n_rf), -np.pi, np.pi)
    return hybrid_zf_solution(H, AnalogPrecoder(phases), link, reward_form)
