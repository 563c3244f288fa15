"""Learnable frequency sampler: a two-layer tanh MLP pushing standard normal
noise to frequencies, ``w = W2 tanh(W1 z + b1) + b2``.

The sampler is the maximising player of the condensation game; it is
trained by pathwise gradient ascent on the CF discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .cf import cf_discrepancy, cf_discrepancy_grads
from .numerics import as_batch

# E[tanh(u)^2] for u ~ N(0, 1)
_TANH_SQ_MEAN = 0.394


@dataclass(frozen=True)
class SamplerParams:
    w1: np.ndarray  # [hidden, noise_dim]
    b1: np.ndarray  # [hidden]
    w2: np.ndarray  # [feature_dim, hidden]
    b2: np.ndarray  # [feature_dim]

    @property
    def noise_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w2.shape[0]

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, f.name).ravel() for f in fields(self)])

    def from_vector(self, vec) -> "SamplerParams":
        out, pos = {}, 0
        for f in fields(self):
            ref = getattr(self, f.name)
            out[f.name] = np.array(vec[pos:pos + ref.size], dtype=np.float64).reshape(ref.shape)
            pos += ref.size
        return SamplerParams(**out)


def init_sampler(rng: np.random.Generator, feature_dim: int, noise_dim: int | None = None,
                 hidden: int | None = None, init_scale: float = 1.0) -> SamplerParams:
    """Random sampler whose frequencies have roughly ``init_scale`` std per entry."""
    noise_dim = noise_dim or feature_dim
    hidden = hidden or 2 * feature_dim
    w1 = rng.standard_normal((hidden, noise_dim)) / np.sqrt(noise_dim)
    w2 = rng.standard_normal((feature_dim, hidden)) * init_scale / np.sqrt(hidden * _TANH_SQ_MEAN)
    return SamplerParams(w1, np.zeros(hidden), w2, np.zeros(feature_dim))


def draw_noise(psi: SamplerParams, rng: np.random.Generator, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one frequency")
    return rng.standard_normal((n, psi.noise_dim))


def frequencies_from_noise(psi: SamplerParams, z: np.ndarray) -> np.ndarray:
    h = np.tanh(z @ psi.w1.T + psi.b1)
    return h @ psi.w2.T + psi.b2


def sample_frequencies(psi: SamplerParams, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` frequencies stacked as ``[n, feature_dim]``."""
    return frequencies_from_noise(psi, draw_noise(psi, rng, n))


def uniform_frequencies(rng: np.random.Generator, n: int, feature_dim: int, scale: float = 1.0) -> np.ndarray:
    """Non-adaptive baseline: i.i.d. N(0, scale^2) frequencies."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    if n < 1:
        raise ValueError("need at least one frequency")
    return scale * rng.standard_normal((n, feature_dim))


def sampler_loss(psi: SamplerParams, feat_a, feat_b, z) -> float:
    return cf_discrepancy(feat_a, feat_b, frequencies_from_noise(psi, z))


def sampler_loss_and_grad(psi: SamplerParams, feat_a, feat_b, z):
    """Discrepancy at the frequencies generated from ``z`` and its gradient
    w.r.t. every sampler parameter (as a ``SamplerParams`` of gradients)."""
    feat_a = as_batch(feat_a, "feat_a")
    feat_b = as_batch(feat_b, "feat_b")
    pre = z @ psi.w1.T + psi.b1
    h = np.tanh(pre)
    omegas = h @ psi.w2.T + psi.b2
    loss, _, _, g_om = cf_discrepancy_grads(feat_a, feat_b, omegas)
    g_h = g_om @ psi.w2
    g_pre = g_h * (1.0 - h**2)
    grads = SamplerParams(
        w1=g_pre.T @ z,
        b1=g_pre.sum(axis=0),
        w2=g_om.T @ h,
        b2=g_om.sum(axis=0),
    )
    return loss, grads


def ascend(psi: SamplerParams, grads: SamplerParams, lr: float) -> SamplerParams:
    return SamplerParams(*(getattr(psi, f.name) + lr * getattr(grads, f.name) for f in fields(psi)))


def sampler_grad_step(psi: SamplerParams, feat_fake, feat_syn, rng: np.random.Generator,
                      n: int, lr: float) -> SamplerParams:
    """One gradient-ascent step on the discrepancy; returns updated params."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    z = draw_noise(psi, rng, n)
    _, grads = sampler_loss_and_grad(psi, feat_fake, feat_syn, z)
    if not np.all(np.isfinite(grads.to_vector())):
        raise FloatingPointError("non-finite sampler gradient")
    return ascend(psi, grads, lr)

