"""Manifold-consistent replay: standardise stored maps and compose them with
current real samples under the variance-preserving rule
``x_rep = sqrt(alpha) * x + sqrt(1 - alpha) * d_std``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .memory import Memory
from .numerics import as_batch, as_tensor

COMPOSITIONS = ("vp", "additive")


@dataclass(frozen=True)
class ScheduleConfig:
    alpha_lo: float = 0.45
    alpha_hi: float = 0.95
    s_offset: float = 0.008
    steps: int = 0  # 0 draws u continuously; >0 restricts u to the grid tau/steps
    standardize_reals: bool = False  # per-dimension z-score of the carriers before composing

    def __post_init__(self):
        if not (0.0 < self.alpha_lo < self.alpha_hi < 1.0):
            raise ValueError(
                f"schedule needs 0 < alpha_lo < alpha_hi < 1, got alpha_lo={self.alpha_lo}, alpha_hi={self.alpha_hi}")
        if self.s_offset < 0:
            raise ValueError("s_offset must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


@dataclass(frozen=True)
class StandardizedDdm:
    map: np.ndarray
    source: tuple[int, int]


def cosine_alpha_bar(u, s: float = 0.008):
    """cos^2(((u + s) / (1 + s)) * pi / 2) for u in [0, 1]."""
    return np.cos((np.asarray(u, dtype=np.float64) + s) / (1.0 + s) * np.pi / 2) ** 2


def _u_of_alpha(alpha: float, s: float) -> float:
    return (1.0 + s) * (2.0 / math.pi) * math.acos(math.sqrt(alpha)) - s


def alpha_window(schedule: ScheduleConfig) -> tuple[float, float]:
    """Range of u for which the cosine schedule lies inside the window."""
    s = schedule.s_offset
    u_lo = max(0.0, _u_of_alpha(schedule.alpha_hi, s))
    u_hi = min(1.0, _u_of_alpha(schedule.alpha_lo, s))
    if u_lo > u_hi:
        raise ValueError("alpha window lies outside the cosine schedule's range")
    return u_lo, u_hi


def sample_alphas(schedule: ScheduleConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    u_lo, u_hi = alpha_window(schedule)
    if schedule.steps:
        taus = np.arange(schedule.steps + 1)
        grid = taus / schedule.steps
        grid = grid[(grid >= u_lo) & (grid <= u_hi)]
        if grid.size == 0:
            raise ValueError("no schedule step falls inside the alpha window")
        u = grid[rng.integers(0, grid.size, size=n)]
    else:
        u = rng.uniform(u_lo, u_hi, size=n)
    return np.clip(cosine_alpha_bar(u, schedule.s_offset), schedule.alpha_lo, schedule.alpha_hi)


def sample_alpha(schedule: ScheduleConfig, rng: np.random.Generator) -> float:
    return float(sample_alphas(schedule, rng, 1)[0])


def standardize_ddm(d, eps: float = 1e-6, source: tuple[int, int] = (-1, -1)) -> StandardizedDdm:
    """(d - mean) / (std + eps) with population std over all entries."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    d = as_tensor(d, "ddm")
    mu = d.mean()
    sigma = np.sqrt(np.mean((d - mu) ** 2))
    return StandardizedDdm((d - mu) / (sigma + eps), source)


def standardize_bank(maps: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Row-wise standardisation of a ``[K, ...]`` stack of maps."""
    flat = maps.reshape(maps.shape[0], -1)
    mu = flat.mean(axis=1, keepdims=True)
    sigma = np.sqrt(np.mean((flat - mu) ** 2, axis=1, keepdims=True))
    return ((flat - mu) / (sigma + eps)).reshape(maps.shape)


def vp_coefficients(alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    return np.sqrt(alpha), np.sqrt(1.0 - alpha)


def compose_vp(x_real, d_std, alpha: float) -> np.ndarray:
    d = d_std.map if isinstance(d_std, StandardizedDdm) else as_tensor(d_std, "ddm")
    x = as_tensor(x_real, "x_real")
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if x.shape != d.shape:
        raise ValueError(f"shape mismatch: real {x.shape} vs map {d.shape}")
    a, b = vp_coefficients(alpha)
    return a * x + b * d


@dataclass(frozen=True)
class ReplaySet:
    x: np.ndarray  # [N, dim]
    labels: np.ndarray  # [N], all ones
    source_task: np.ndarray  # [N]
    map_index: np.ndarray  # [N]
    alpha: np.ndarray  # [N]

    def __len__(self) -> int:
        return self.x.shape[0]

    @staticmethod
    def empty(dim: int) -> "ReplaySet":
        z = np.zeros(0, dtype=np.int64)
        return ReplaySet(np.zeros((0, dim)), np.zeros(0), z, z.copy(), np.zeros(0))

    def manifest_rows(self):
        for t, k, a in zip(self.source_task, self.map_index, self.alpha):
            yield int(t), int(k), float(a)


def build_replay_set(memory: Memory, current_reals, schedule: ScheduleConfig, rng: np.random.Generator,
                     n_per_task: int, *, standardize: bool = True, composition: str = "vp",
                     eps: float = 1e-6) -> ReplaySet:
    """Fake-labelled replay from every stored bank composed with current reals.

    ``standardize=False`` and ``composition="additive"`` exist for ablations;
    additive composition is the plain sum ``x + d``.
    """
    if n_per_task < 1:
        raise ValueError("n_per_task must be >= 1")
    if composition not in COMPOSITIONS:
        raise ValueError(f"unknown composition {composition!r}")
    reals = as_batch(current_reals, "current_reals")
    if not memory.banks:
        return ReplaySet.empty(reals.shape[1])
    if schedule.standardize_reals:
        reals = (reals - reals.mean(axis=0)) / (reals.std(axis=0) + eps)
    xs, tasks, idxs, alphas = [], [], [], []
    for bank in memory.banks:
        maps = bank.maps.reshape(bank.K, -1)
        if maps.shape[1] != reals.shape[1]:
            raise ValueError("map and real sample shapes differ")
        if standardize:
            maps = standardize_bank(maps, eps)
        ri = rng.integers(0, reals.shape[0], size=n_per_task)
        ki = rng.integers(0, bank.K, size=n_per_task)
        al = sample_alphas(schedule, rng, n_per_task)
        if composition == "vp":
            a, b = vp_coefficients(al)
            xs.append(a[:, None] * reals[ri] + b[:, None] * maps[ki])
        else:
            xs.append(reals[ri] + maps[ki])
        tasks.append(np.full(n_per_task, bank.task_id, dtype=np.int64))
        idxs.append(ki.astype(np.int64))
        alphas.append(al)
    x = np.concatenate(xs)
    return ReplaySet(x, np.ones(x.shape[0]), np.concatenate(tasks), np.concatenate(idxs), np.concatenate(alphas))
