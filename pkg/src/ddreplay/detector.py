"""Binary detector: a logistic head (optionally one tanh hidden layer) over
the frozen feature map, trained on current-task BCE plus weighted replay BCE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMap, extract
from .numerics import as_batch, child_rng

P_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    epochs: int = 20
    batch_size: int = 64
    lambda_rep: float = 1.0
    replay_ratio: float = 1.0  # replay minibatch size relative to batch_size
    hidden: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("train.lr must be > 0")
        if self.epochs < 1:
            raise ValueError("train.epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("train.batch_size must be >= 1")
        if self.lambda_rep < 0:
            raise ValueError("train.lambda_rep must be >= 0")
        if self.replay_ratio <= 0:
            raise ValueError("train.replay_ratio must be > 0")
        if self.hidden < 0:
            raise ValueError("train.hidden must be >= 0")


@dataclass(frozen=True)
class DetectorParams:
    weights: np.ndarray  # [feature_dim] or [hidden] with a hidden layer
    bias: float
    w1: np.ndarray | None = None  # [hidden, feature_dim]
    b1: np.ndarray | None = None  # [hidden]

    def _arrays(self):
        out = [np.asarray(self.weights, dtype=np.float64).ravel(), np.array([self.bias], dtype=np.float64)]
        if self.w1 is not None:
            out += [self.w1.ravel(), self.b1.ravel()]
        return out

    def to_vector(self) -> np.ndarray:
        return np.concatenate(self._arrays())

    def from_vector(self, vec) -> "DetectorParams":
        vec = np.asarray(vec, dtype=np.float64)
        n = self.weights.size
        w, b = vec[:n].copy(), float(vec[n])
        if self.w1 is None:
            return DetectorParams(w, b)
        pos = n + 1
        w1 = vec[pos:pos + self.w1.size].reshape(self.w1.shape).copy()
        pos += self.w1.size
        return DetectorParams(w, b, w1, vec[pos:pos + self.b1.size].copy())


def init_detector(feature_dim: int, hidden: int = 0, rng: np.random.Generator | None = None) -> DetectorParams:
    if hidden == 0:
        return DetectorParams(np.zeros(feature_dim), 0.0)
    if rng is None:
        raise ValueError("a hidden layer needs an rng for initialisation")
    w1 = rng.standard_normal((hidden, feature_dim)) / np.sqrt(feature_dim)
    return DetectorParams(rng.standard_normal(hidden) / np.sqrt(hidden), 0.0, w1, np.zeros(hidden))


def _logits(theta: DetectorParams, feats: np.ndarray):
    if theta.w1 is None:
        return feats @ theta.weights + theta.bias, None
    h = np.tanh(feats @ theta.w1.T + theta.b1)
    return h @ theta.weights + theta.bias, h


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def predict(theta: DetectorParams, fmap: FeatureMap, x):
    """Fake probability for one sample (float) or a batch (array)."""
    x = np.asarray(x, dtype=np.float64)
    z, _ = _logits(theta, extract(fmap, x))
    return float(sigmoid(z)) if x.ndim == 1 else sigmoid(z)


def predict_features(theta: DetectorParams, feats) -> np.ndarray:
    return sigmoid(_logits(theta, np.asarray(feats, dtype=np.float64))[0])


def bce_loss(p, y):
    p = np.clip(np.asarray(p, dtype=np.float64), P_CLAMP, 1.0 - P_CLAMP)
    loss = -(y * np.log(p) + (1 - y) * np.log(1.0 - p))
    return float(loss) if np.ndim(loss) == 0 else loss


def _bce_from_logits(z, y):
    # softplus(z) - y z, stable for large |z|
    return np.logaddexp(0.0, z) - y * z


def objective(theta: DetectorParams, feats_cur, y_cur, feats_rep=None, lambda_rep: float = 1.0) -> float:
    """Mean current-task BCE plus ``lambda_rep`` times mean replay BCE (target 1)."""
    z, _ = _logits(theta, feats_cur)
    loss = float(np.mean(_bce_from_logits(z, y_cur)))
    if feats_rep is not None and len(feats_rep):
        zr, _ = _logits(theta, feats_rep)
        loss += lambda_rep * float(np.mean(_bce_from_logits(zr, 1.0)))
    return loss


def _head_grads(theta: DetectorParams, feats, g_z, h):
    if theta.w1 is None:
        return [feats.T @ g_z, np.array([g_z.sum()])]
    g_h = g_z[:, None] * theta.weights[None, :]
    g_pre = g_h * (1.0 - h**2)
    return [h.T @ g_z, np.array([g_z.sum()]), (g_pre.T @ feats).ravel(), g_pre.sum(axis=0)]


def objective_grad(theta: DetectorParams, feats_cur, y_cur, feats_rep=None, lambda_rep: float = 1.0) -> np.ndarray:
    """Gradient of ``objective`` as a flat vector in ``to_vector`` order."""
    z, h = _logits(theta, feats_cur)
    g = _head_grads(theta, feats_cur, (sigmoid(z) - y_cur) / len(z), h)
    total = np.concatenate([np.ravel(a) for a in g])
    if feats_rep is not None and len(feats_rep):
        zr, hr = _logits(theta, feats_rep)
        gr = _head_grads(theta, feats_rep, lambda_rep * (sigmoid(zr) - 1.0) / len(zr), hr)
        total = total + np.concatenate([np.ravel(a) for a in gr])
    return total


def train_task(theta: DetectorParams, current_x, current_y, replay_x, fmap: FeatureMap,
               config: TrainConfig, rng: np.random.Generator) -> DetectorParams:
    """Minibatch SGD on current BCE + lambda_rep * replay BCE.

    Every replay sample is trained towards the fake label. The current-data
    shuffle and the replay draws use separate streams, so ``lambda_rep=0``
    reproduces current-only training bit for bit.
    """
    feats = extract(fmap, as_batch(current_x, "current_x"))
    y = np.asarray(current_y, dtype=np.float64)
    if y.shape != (feats.shape[0],):
        raise ValueError("need one label per current sample")
    rep = None
    if replay_x is not None and len(replay_x):
        rep = extract(fmap, as_batch(replay_x, "replay_x"))
    cur_rng = child_rng(rng, "detector/current")
    rep_rng = child_rng(rng, "detector/replay")
    n_rep = max(1, int(round(config.replay_ratio * config.batch_size)))
    vec = theta.to_vector()
    for _ in range(config.epochs):
        order = cur_rng.permutation(feats.shape[0])
        for start in range(0, feats.shape[0], config.batch_size):
            idx = order[start:start + config.batch_size]
            rb = rep[rep_rng.integers(0, rep.shape[0], size=n_rep)] if rep is not None else None
            g = objective_grad(theta.from_vector(vec), feats[idx], y[idx], rb, config.lambda_rep)
            vec = vec - config.lr * g
        if not np.all(np.isfinite(vec)):
            raise FloatingPointError("detector training diverged")
    return theta.from_vector(vec)


def accuracy(theta: DetectorParams, fmap: FeatureMap, x, y) -> float:
    p = predict(theta, fmap, as_batch(x))
    return float(np.mean((p >= 0.5) == (np.asarray(y) == 1)))
