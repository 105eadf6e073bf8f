"""Named parameter arrays for the interaction model and the encoder-decoder baseline.

Factor sharing: one edge parameter set per ordered agent-type pair (so K^2 of
them, covering spatial edges and, via the same-type pair, temporal edges) and
one node parameter set per agent type.  Array count therefore depends only on
the number of agent types, never on how many agents share a scene.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ParameterSet:
    """A flat mapping of parameter names to arrays, iterated in sorted order."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.arrays[key]

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def n_scalars(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(a) for k, a in self.arrays.items()}

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: a.copy() for k, a in self.arrays.items()})

    def astype(self, dtype) -> "ParameterSet":
        return ParameterSet({k: a.astype(dtype) for k, a in self.arrays.items()})

    def validate_finite(self) -> None:
        for k, a in self.arrays.items():
            if not np.isfinite(a).all():
                raise ValueError(f"parameter array {k} contains non-finite values")


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
             dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# Embedding biases start slightly positive: several inputs (first-step
# displacements, padded gaps) are exactly zero, and a zero bias would park
# every ReLU pre-activation exactly on its kink — harmless for training but
# ruining finite-difference verification of an otherwise correct backward.
_EMBED_BIAS = 0.01


def _lstm_arrays(rng: np.random.Generator, d_in: int, hidden: int, dtype,
                 forget_bias: float = 1.0) -> dict[str, np.ndarray]:
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = forget_bias  # bias the forget gate open early in training
    return {
        "wx": _uniform(rng, (d_in, 4 * hidden), d_in, dtype),
        "wh": _uniform(rng, (hidden, 4 * hidden), hidden, dtype),
        "b": b,
    }


def init_response_params(k_types: int, edge_hidden: int = 128, node_hidden: int = 64,
                         embed_dim: int = 64, attn_dim: int = 64, seed: int = 0,
                         dtype=np.float64) -> ParameterSet:
    """All learnable arrays for the interaction model, keyed by factor.

    Per ordered type pair (ka, kb): an input embedding (2 -> embed_dim) and an
    LSTM of size ``edge_hidden``.  Per node type k: position and edge-context
    embeddings, an LSTM of size ``node_hidden`` and a 5-channel Gaussian
    readout.  Two projection matrices for the attention module are shared
    across all types.
    """
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for ka in range(k_types):
        for kb in range(k_types):
            p = f"edge.{ka}-{kb}"
            arrays[f"{p}.embed.w"] = _uniform(rng, (2, embed_dim), 2, dtype)
            arrays[f"{p}.embed.b"] = np.full(embed_dim, _EMBED_BIAS, dtype=dtype)
            for name, a in _lstm_arrays(rng, embed_dim, edge_hidden, dtype).items():
                arrays[f"{p}.lstm.{name}"] = a
    for k in range(k_types):
        p = f"node.{k}"
        arrays[f"{p}.pos_embed.w"] = _uniform(rng, (2, embed_dim), 2, dtype)
        arrays[f"{p}.pos_embed.b"] = np.full(embed_dim, _EMBED_BIAS, dtype=dtype)
        arrays[f"{p}.edge_embed.w"] = _uniform(rng, (2 * edge_hidden, embed_dim),
                                               2 * edge_hidden, dtype)
        arrays[f"{p}.edge_embed.b"] = np.full(embed_dim, _EMBED_BIAS, dtype=dtype)
        for name, a in _lstm_arrays(rng, 2 * embed_dim, node_hidden, dtype).items():
            arrays[f"{p}.lstm.{name}"] = a
        arrays[f"{p}.out.w"] = _uniform(rng, (node_hidden, 5), node_hidden, dtype)
        arrays[f"{p}.out.b"] = np.zeros(5, dtype=dtype)
    arrays["attn.temporal.w"] = _uniform(rng, (edge_hidden, attn_dim), edge_hidden, dtype)
    arrays["attn.spatial.w"] = _uniform(rng, (edge_hidden, attn_dim), edge_hidden, dtype)
    return ParameterSet(arrays)


def init_red_params(hidden: int = 64, embed_dim: int = 64, seed: int = 0,
                    dtype=np.float64) -> ParameterSet:
    """Encoder-decoder baseline: shared displacement embedding, two LSTMs, readout."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {
        "red.embed.w": _uniform(rng, (2, embed_dim), 2, dtype),
        "red.embed.b": np.full(embed_dim, _EMBED_BIAS, dtype=dtype),
    }
    for name, a in _lstm_arrays(rng, embed_dim, hidden, dtype).items():
        arrays[f"red.enc.{name}"] = a
    for name, a in _lstm_arrays(rng, embed_dim, hidden, dtype).items():
        arrays[f"red.dec.{name}"] = a
    arrays["red.out.w"] = _uniform(rng, (hidden, 5), hidden, dtype)
    arrays["red.out.b"] = np.zeros(5, dtype=dtype)
    return ParameterSet(arrays)
