"""Clustered geometric mmWave channel for a ULA base station.

Each user ``k`` sees

    h_k = sqrt(N_t / (N_cl N_ray)) * sum_{i,j} alpha_ij g(phi_ij)

with complex Gaussian path gains of per-cluster power, and ``H`` stacks the
rows ``h_k^H``.  Angles of departure: cluster centres uniform on
``[-pi/2, pi/2]``, rays offset from their centre by a Laplacian with
standard deviation ``angle_spread``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .numerics import ContractError, Rng

__all__ = [
    "SteeringNorm",
    "ChannelConfig",
    "steering_vector",
    "generate_channel",
    "compose_channel",
    "channel_to_json",
    "channel_from_json",
    "save_channels",
    "load_channels",
]


class SteeringNorm(str, Enum):
    AS_WRITTEN = "as_written"  # 1/N_t prefactor
    UNIT_NORM = "unit_norm"  # 1/sqrt(N_t) prefactor


@dataclass
class ChannelConfig:
    n_tx: int = 64
    n_users: int = 8
    n_clusters: int = 10
    n_rays: int = 8
    spacing_ratio: float = 0.5
    cluster_powers: list[float] | None = None
    angle_spread: float = np.deg2rad(10.0)
    steering_norm: SteeringNorm = SteeringNorm.AS_WRITTEN

    def __post_init__(self):
        self.steering_norm = SteeringNorm(self.steering_norm)
        if self.cluster_powers is None:
            self.cluster_powers = [1.0] * self.n_clusters
        self.cluster_powers = [float(p) for p in self.cluster_powers]
        self.validate()

    def validate(self):
        for name in ("n_tx", "n_users", "n_clusters", "n_rays"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be >= 1")
        if self.spacing_ratio <= 0:
            raise ContractError("spacing_ratio must be positive")
        powers = self.cluster_powers
        if len(powers) != self.n_clusters:
            raise ContractError("cluster_powers needs one entry per cluster")
        if min(powers) < 0 or max(powers) <= 0:
            raise ContractError("cluster_powers must be nonnegative and not all zero")
        if self.angle_spread < 0:
            raise ContractError("angle_spread must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "n_tx": self.n_tx,
            "n_users": self.n_users,
            "n_clusters": self.n_clusters,
            "n_rays": self.n_rays,
            "spacing_ratio": self.spacing_ratio,
            "cluster_powers": list(self.cluster_powers),
            "angle_spread": self.angle_spread,
            "steering_norm": self.steering_norm.value,
        }


def _norm_factor(n_tx: int, norm) -> float:
    return 1.0 / n_tx if SteeringNorm(norm) is SteeringNorm.AS_WRITTEN else 1.0 / np.sqrt(n_tx)


def steering_vector(phi, n_tx: int, spacing_ratio: float = 0.5,
                    norm: SteeringNorm = SteeringNorm.AS_WRITTEN) -> np.ndarray:
    """ULA array response toward angle(s) ``phi``.

    A scalar angle gives a length-``n_tx`` vector; an array of angles gives
    one response per trailing row, shape ``phi.shape + (n_tx,)``.
    """
    if n_tx < 1:
        raise ContractError("n_tx must be >= 1")
    phi = np.asarray(phi, dtype=np.float64)
    m = np.arange(n_tx)
    phase = 2.0 * np.pi * spacing_ratio * np.sin(phi)[..., None] * m
    return _norm_factor(n_tx, norm) * np.exp(1j * phase)


def _laplace(rng: Rng, size, spread: float) -> np.ndarray:
    # inverse CDF; scale b gives standard deviation b*sqrt(2)
    b = spread / np.sqrt(2.0)
    u = rng.uniform(size) - 0.5
    return -b * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def generate_channel(cfg: ChannelConfig, rng: Rng, n_draws: int | None = None) -> np.ndarray:
    """Draw ``H`` (``n_users x n_tx``), or a stack of ``n_draws`` of them.

    Consumption order per call: cluster centres, ray offsets, then path
    gains, each for all draws/users/clusters/rays in C order.
    """
    batch = 1 if n_draws is None else int(n_draws)
    shape = (batch, cfg.n_users, cfg.n_clusters, cfg.n_rays)
    centres = rng.uniform(shape[:3], -np.pi / 2, np.pi / 2)
    offsets = _laplace(rng, shape, cfg.angle_spread)
    angles = centres[..., None] + offsets
    sigma = np.sqrt(np.asarray(cfg.cluster_powers))[None, None, :, None]
    gains = sigma * rng.complex_normal(shape)
    H = compose_channel(cfg, gains, angles)
    return H[0] if n_draws is None else H


def compose_channel(cfg: ChannelConfig, gains: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Sum the rays for given path gains and AoDs.

    ``gains`` and ``angles`` have shape ``(..., n_users, n_clusters, n_rays)``;
    the result has shape ``(..., n_users, n_tx)`` with rows ``h_k^H``.
    """
    g = steering_vector(angles, cfg.n_tx, cfg.spacing_ratio, cfg.steering_norm)
    h = np.sqrt(cfg.n_tx / (cfg.n_clusters * cfg.n_rays)) * np.einsum("...ij,...ijn->...n", gains, g)
    return h.conj()


def channel_to_json(H: np.ndarray) -> list:
    return [[{"re": float(z.real), "im": float(z.imag)} for z in row] for row in np.asarray(H)]


def channel_from_json(rows: list) -> np.ndarray:
    return np.array([[complex(z["re"], z["im"]) for z in row] for row in rows], dtype=np.complex128)


def save_channels(path, channels) -> None:
    Path(path).write_text(json.dumps([channel_to_json(H) for H in channels]))


def load_channels(path) -> list[np.ndarray]:
    return [channel_from_json(m) for m in json.loads(Path(path).read_text())]
