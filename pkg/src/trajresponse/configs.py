"""Dataclass configuration for models and training runs."""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

from .neural.losses import LossConfig
from .trajdata import StandardizationStats, TARGET_RATE_HZ

ATTENTION_SCALES = ("count_over_sqrt_dim", "inv_sqrt_dim")


@dataclass
class ModelConfig:
    """Architecture plus the data conventions a trained model is bound to."""

    type_labels: list[str]
    n_obs: int = 12
    n_pred: int = 12
    dt: float = 1.0 / TARGET_RATE_HZ
    loss: LossConfig = field(default_factory=LossConfig)
    edge_hidden: int = 128
    node_hidden: int = 64
    embed_dim: int = 64
    attn_dim: int = 64
    attention_scale: str = "count_over_sqrt_dim"
    stats: StandardizationStats = field(
        default_factory=lambda: StandardizationStats(0.0, 0.0, 1.0, 1.0))

    def __post_init__(self) -> None:
        if self.attention_scale not in ATTENTION_SCALES:
            raise ValueError(f"attention_scale must be one of {ATTENTION_SCALES}")
        if self.n_obs < 2 or self.n_pred < 1:
            raise ValueError("need n_obs >= 2 and n_pred >= 1")

    @property
    def k_types(self) -> int:
        return len(self.type_labels)

    def to_manifest(self) -> dict:
        return {
            "model": "response_rnn",
            "type_labels": list(self.type_labels),
            "n_obs": self.n_obs,
            "n_pred": self.n_pred,
            "dt": self.dt,
            "loss_mode": self.loss.mode,
            "alpha_stationary": self.loss.alpha_stationary,
            "speed_threshold_mps": self.loss.speed_threshold_mps,
            "edge_hidden": self.edge_hidden,
            "node_hidden": self.node_hidden,
            "embed_dim": self.embed_dim,
            "attn_dim": self.attn_dim,
            "attention_scale": self.attention_scale,
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_manifest(cls, m: dict) -> "ModelConfig":
        return cls(
            type_labels=list(m["type_labels"]),
            n_obs=int(m["n_obs"]), n_pred=int(m["n_pred"]), dt=float(m["dt"]),
            loss=LossConfig(mode=m["loss_mode"],
                            alpha_stationary=float(m["alpha_stationary"]),
                            speed_threshold_mps=float(m["speed_threshold_mps"])),
            edge_hidden=int(m["edge_hidden"]), node_hidden=int(m["node_hidden"]),
            embed_dim=int(m["embed_dim"]), attn_dim=int(m["attn_dim"]),
            attention_scale=m["attention_scale"],
            stats=StandardizationStats.from_dict(m["stats"]),
        )


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the reference training setup."""

    lr: float = 0.003
    epochs: int = 100
    batch_size: int = 8
    grad_clip: float = 10.0
    lr_decay: float = 0.97
    seed: int = 0
    teacher_forcing: bool = True

    def to_dict(self) -> dict:
        return asdict(self)
