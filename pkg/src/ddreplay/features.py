"""Frozen feature extractor shared by condensation, detection and analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import as_tensor

NONLINEARITIES = ("identity", "tanh")


@dataclass(frozen=True)
class FeatureMap:
    projection: np.ndarray  # [out_dim, in_dim]
    bias: np.ndarray  # [out_dim]
    nonlinearity: str = "identity"

    def __post_init__(self):
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        proj = np.array(as_tensor(self.projection, "projection"), copy=True)
        bias = np.array(as_tensor(self.bias, "bias"), copy=True)
        if proj.ndim != 2 or bias.shape != (proj.shape[0],):
            raise ValueError("projection must be [out, in] and bias [out]")
        proj.flags.writeable = False
        bias.flags.writeable = False
        object.__setattr__(self, "projection", proj)
        object.__setattr__(self, "bias", bias)

    @property
    def in_dim(self) -> int:
        return self.projection.shape[1]

    @property
    def out_dim(self) -> int:
        return self.projection.shape[0]

    def to_bytes(self) -> bytes:
        return self.nonlinearity.encode() + self.projection.tobytes() + self.bias.tobytes()


def init_feature_map(rng: np.random.Generator, in_dim: int, out_dim: int, nonlinearity: str = "identity") -> FeatureMap:
    if in_dim < 1 or out_dim < 1:
        raise ValueError("feature map dimensions must be >= 1")
    proj = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
    return FeatureMap(proj, np.zeros(out_dim), nonlinearity)


def identity_feature_map(dim: int) -> FeatureMap:
    return FeatureMap(np.eye(dim), np.zeros(dim), "identity")


def _preact(fmap: FeatureMap, x) -> np.ndarray:
    x = as_tensor(x, "x")
    if x.shape[-1] != fmap.in_dim:
        raise ValueError(f"input dimension {x.shape[-1]} does not match feature map in_dim {fmap.in_dim}")
    return x @ fmap.projection.T + fmap.bias


def extract(fmap: FeatureMap, x) -> np.ndarray:
    """Features of one sample ``[in_dim]`` or a batch ``[n, in_dim]``."""
    z = _preact(fmap, x)
    return np.tanh(z) if fmap.nonlinearity == "tanh" else z


def backprop(fmap: FeatureMap, x, grad_features) -> np.ndarray:
    """Pull a gradient w.r.t. features back to the inputs."""
    g = np.asarray(grad_features, dtype=np.float64)
    if fmap.nonlinearity == "tanh":
        g = g * (1.0 - np.tanh(_preact(fmap, x)) ** 2)
    return g @ fmap.projection
