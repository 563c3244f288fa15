"""Distribution-discrepancy condensation.

A bank of K discrepancy maps is fitted so that real samples composed with
the maps, ``a * x + b * d``, match the fake samples in characteristic
function. The frequency sampler maximises the CF discrepancy while the bank
minimises it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cf import cf_discrepancy, cf_discrepancy_grads
from .features import FeatureMap, backprop, extract
from .mcr import ScheduleConfig, sample_alphas
from .memory import DdmBank
from .numerics import as_batch, child_rng
from .sampler import (SamplerParams, ascend, draw_noise, frequencies_from_noise, init_sampler,
                      sampler_loss_and_grad)

log = logging.getLogger(__name__)

INIT_MODES = ("gaussian_small", "fake_minus_real")
ALPHA_MODES = ("vp_schedule", "vp_per_sample", "fixed")
OPTIMIZERS = ("sgd", "adam")


class DivergenceError(FloatingPointError):
    """Condensation produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class DdcConfig:
    K: int = 50
    iterations: int = 3000
    lr_ddm: float = 0.01
    lr_sampler: float = 0.01
    n_freq: int = 64
    batch_size: int = 256
    init_mode: str = "fake_minus_real"
    alpha_mode: str = "fixed"
    fixed_a: float = 0.6
    fixed_b: float = 0.8
    optimizer: str = "adam"
    sampler_reinit: bool = True
    sampler_init_scale: float = 0.1
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def __post_init__(self):
        for name in ("K", "n_freq", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"ddc.{name} must be >= 1")
        if self.iterations < 0:
            raise ValueError("ddc.iterations must be >= 0")
        for name in ("lr_ddm", "lr_sampler", "sampler_init_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ddc.{name} must be > 0")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"ddc.init_mode must be one of {INIT_MODES}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ValueError(f"ddc.alpha_mode must be one of {ALPHA_MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"ddc.optimizer must be one of {OPTIMIZERS}")
        if self.alpha_mode == "fixed":
            if self.fixed_a <= 0 or self.fixed_b <= 0 or abs(self.fixed_a**2 + self.fixed_b**2 - 1.0) > 1e-9:
                raise ValueError("ddc.fixed_a and ddc.fixed_b must be positive with a^2 + b^2 = 1")


@dataclass
class CondenseResult:
    bank: DdmBank
    trace: np.ndarray  # DDC loss per iteration
    sampler: SamplerParams
    map_alphas: np.ndarray  # per-map alpha in vp_schedule mode, else empty


def init_ddm_bank(rng: np.random.Generator, K: int, shape, init_mode: str = "gaussian_small",
                  reals=None, fakes=None, task_id: int = 0) -> DdmBank:
    if K < 1:
        raise ValueError("K must be >= 1")
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    if init_mode == "gaussian_small":
        maps = 0.01 * rng.standard_normal((K,) + shape)
    elif init_mode == "fake_minus_real":
        if reals is None or fakes is None:
            raise ValueError("fake_minus_real initialisation needs real and fake samples")
        reals = as_batch(reals, "reals")
        fakes = as_batch(fakes, "fakes")
        fi = rng.integers(0, fakes.shape[0], size=K)
        ri = rng.integers(0, reals.shape[0], size=K)
        maps = (fakes[fi] - reals[ri]).reshape((K,) + shape)
    else:
        raise ValueError(f"unknown init_mode {init_mode!r}")
    return DdmBank(task_id, maps)


def draw_pairing(rng: np.random.Generator, n: int, K: int) -> np.ndarray:
    """Uniform map index per real sample, with replacement."""
    return rng.integers(0, K, size=n)


def _coefficients(alphas) -> tuple[np.ndarray, np.ndarray]:
    alphas = np.asarray(alphas, dtype=np.float64)
    if np.any(alphas <= 0) or np.any(alphas >= 1):
        raise ValueError("alphas must lie in (0, 1)")
    return np.sqrt(alphas), np.sqrt(1.0 - alphas)


def compose_batch(reals, bank, alphas, pairing) -> np.ndarray:
    """``sqrt(a_i) x_i + sqrt(1 - a_i) d_{k(i)}`` with raw (unstandardised) maps.

    ``bank`` is a DdmBank or a ``[K, dim]`` array; ``pairing`` is either a
    generator (indices are drawn uniformly) or an index array.
    """
    reals = as_batch(reals, "reals")
    maps = bank.maps if isinstance(bank, DdmBank) else np.asarray(bank, dtype=np.float64)
    maps = maps.reshape(maps.shape[0], -1)
    if maps.shape[1] != reals.shape[1]:
        raise ValueError(f"shape mismatch: real dim {reals.shape[1]} vs map dim {maps.shape[1]}")
    if isinstance(pairing, np.random.Generator):
        pairing = draw_pairing(pairing, reals.shape[0], maps.shape[0])
    a, b = _coefficients(alphas)
    if a.shape != (reals.shape[0],):
        raise ValueError("need one alpha per real sample")
    return a[:, None] * reals + b[:, None] * maps[np.asarray(pairing)]


def ddc_loss(fake_batch, syn_batch, fmap: FeatureMap, omegas) -> float:
    return cf_discrepancy(extract(fmap, as_batch(fake_batch)), extract(fmap, as_batch(syn_batch)), omegas)


def ddc_loss_grad(fake_batch, reals, bank, alphas, pairing, fmap: FeatureMap, omegas):
    """Loss and its exact gradient w.r.t. every map entry; grad shape [K, dim]."""
    maps = bank.maps if isinstance(bank, DdmBank) else np.asarray(bank, dtype=np.float64)
    K = maps.shape[0]
    maps = maps.reshape(K, -1)
    pairing = np.asarray(pairing)
    syn = compose_batch(reals, maps, alphas, pairing)
    loss, _, g_syn_feat, _ = cf_discrepancy_grads(extract(fmap, as_batch(fake_batch)), extract(fmap, syn), omegas)
    g_syn = backprop(fmap, syn, g_syn_feat)
    _, b = _coefficients(alphas)
    grad = np.zeros_like(maps)
    np.add.at(grad, pairing, b[:, None] * g_syn)
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient w.r.t. discrepancy maps")
    return loss, grad


class Adam:
    """Elementwise Adam step sizes for a fixed-shape parameter."""

    def __init__(self, shape, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def direction(self, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return self.lr * mhat / (np.sqrt(vhat) + self.eps)


def minibatch(rng: np.random.Generator, data: np.ndarray, size: int) -> np.ndarray:
    """Rows drawn with replacement; at most ``len(data)`` of them."""
    idx = rng.integers(0, data.shape[0], size=min(size, data.shape[0]))
    return data[idx]


def condense_task(real_data, fake_data, fmap: FeatureMap, config: DdcConfig, rng: np.random.Generator,
                  task_id: int = 0, sampler: SamplerParams | None = None, monitor=None) -> CondenseResult:
    """Min-max condensation of one task's fake class into a map bank.

    Each iteration draws real and fake minibatches, composition coefficients
    and frequency noise, takes one ascent step on the sampler, then one
    descent step on the bank at frequencies from the updated sampler.
    """
    reals = as_batch(real_data, "real_data")
    fakes = as_batch(fake_data, "fake_data")
    dim = reals.shape[1]
    init_rng = child_rng(rng, "ddc/init")
    loop_rng = child_rng(rng, "ddc/loop")

    bank = init_ddm_bank(init_rng, config.K, (dim,), config.init_mode, reals, fakes, task_id)
    if sampler is None or config.sampler_reinit:
        sampler = init_sampler(init_rng, fmap.out_dim, init_scale=config.sampler_init_scale)
    map_alphas = (sample_alphas(config.schedule, init_rng, config.K)
                  if config.alpha_mode == "vp_schedule" else np.zeros(0))

    maps = np.array(bank.maps.reshape(config.K, -1), copy=True)
    opt = Adam(maps.shape, config.lr_ddm) if config.optimizer == "adam" else None
    trace = np.zeros(config.iterations)
    for it in range(config.iterations):
        rb = minibatch(loop_rng, reals, config.batch_size)
        fb = minibatch(loop_rng, fakes, config.batch_size)
        pairing = draw_pairing(loop_rng, rb.shape[0], config.K)
        if config.alpha_mode == "vp_schedule":
            alphas = map_alphas[pairing]
        elif config.alpha_mode == "vp_per_sample":
            alphas = sample_alphas(config.schedule, loop_rng, rb.shape[0])
        else:
            alphas = np.full(rb.shape[0], config.fixed_a**2)
        z = draw_noise(sampler, loop_rng, config.n_freq)

        fake_feat = extract(fmap, fb)
        syn_feat = extract(fmap, compose_batch(rb, maps, alphas, pairing))
        _, g_psi = sampler_loss_and_grad(sampler, fake_feat, syn_feat, z)
        sampler = ascend(sampler, g_psi, config.lr_sampler)

        omegas = frequencies_from_noise(sampler, z)
        loss, grad = ddc_loss_grad(fb, rb, maps, alphas, pairing, fmap, omegas)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite DDC loss at iteration {it}")
        trace[it] = loss
        maps = maps - (opt.direction(grad) if opt is not None else config.lr_ddm * grad)
        if not np.all(np.isfinite(maps)):
            raise DivergenceError(f"discrepancy maps diverged at iteration {it}")
        if monitor is not None:
            monitor(it, loss, maps, omegas)
        if it % 500 == 0:
            log.debug("ddc task %d iter %d loss %.5f", task_id, it, loss)

    final = DdmBank(task_id, maps.reshape((config.K,) + bank.map_shape))
    return CondenseResult(final, trace, sampler, map_alphas)


def composition_alphas(result: CondenseResult, config: DdcConfig, pairing, rng: np.random.Generator) -> np.ndarray:
    """Coefficients matching the composition law a condensed bank was fitted under."""
    if config.alpha_mode == "vp_schedule":
        return result.map_alphas[np.asarray(pairing)]
    if config.alpha_mode == "vp_per_sample":
        return sample_alphas(config.schedule, rng, len(pairing))
    return np.full(len(pairing), config.fixed_a**2)
