"""Multi-agent deep reinforcement learning for hybrid beamforming in mmWave MU-MISO."""

from .channel import ChannelConfig, SteeringNorm, generate_channel
from .madrl import EpisodeResult, TrainerConfig, train_episode
from .numerics import ContractError, Rng
from .precoding import LinkConfig, full_digital_zf_rate, hybrid_zf_solution, random_phase_baseline

__version__ = "0.1.0"

__all__ = [
    "ChannelConfig",
    "SteeringNorm",
    "generate_channel",
    "TrainerConfig",
    "EpisodeResult",
    "train_episode",
    "Rng",
    "ContractError",
    "LinkConfig",
    "hybrid_zf_solution",
    "full_digital_zf_rate",
    "random_phase_baseline",
]
