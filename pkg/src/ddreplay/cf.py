"""Empirical characteristic functions and the CF discrepancy.

Frequencies are float64 vectors of the feature dimension; a set of ``M``
frequencies is stacked as an ``[M, dim]`` array. CF values are Python
``complex`` numbers (scalar API) or complex128 arrays (vectorised API).
"""

from __future__ import annotations

import numpy as np

from .numerics import as_batch, as_tensor


def _check_omegas(omegas, dim: int) -> np.ndarray:
    om = as_tensor(omegas, "omegas")
    if om.ndim == 1:
        om = om[None, :]
    if om.shape[0] == 0:
        raise ValueError("empty frequency list")
    if om.shape[1] != dim:
        raise ValueError(f"frequency dimension {om.shape[1]} does not match feature dimension {dim}")
    return om


def cf_values(features, omegas) -> np.ndarray:
    """Empirical CF of ``features`` at every row of ``omegas``; shape [M]."""
    feats = as_batch(features, "features")
    om = _check_omegas(omegas, feats.shape[1])
    phase = om @ feats.T
    return np.cos(phase).mean(axis=1) + 1j * np.sin(phase).mean(axis=1)


def empirical_cf(features, omega) -> complex:
    omega = as_tensor(omega, "omega")
    if omega.ndim != 1:
        raise ValueError("omega must be a single frequency vector")
    return complex(cf_values(features, omega[None, :])[0])


def cf_discrepancy(feat_a, feat_b, omegas) -> float:
    """Mean over frequencies of |CF_a(w) - CF_b(w)|."""
    a = as_batch(feat_a, "feat_a")
    b = as_batch(feat_b, "feat_b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensions differ")
    diff = cf_values(a, omegas) - cf_values(b, omegas)
    return float(np.abs(diff).mean())


def cf_discrepancy_grads(feat_a, feat_b, omegas):
    """Discrepancy and its gradients w.r.t. ``feat_a``, ``feat_b`` and ``omegas``.

    Where a CF difference has modulus exactly zero the subgradient 0 is used.
    Returns ``(loss, grad_a, grad_b, grad_omegas)``.
    """
    a = as_batch(feat_a, "feat_a")
    b = as_batch(feat_b, "feat_b")
    om = _check_omegas(omegas, a.shape[1])
    if a.shape[1] != b.shape[1]:
        raise ValueError("feature dimensions differ")
    m = om.shape[0]
    ea = np.exp(1j * (om @ a.T))  # [M, na]
    eb = np.exp(1j * (om @ b.T))  # [M, nb]
    diff = ea.mean(axis=1) - eb.mean(axis=1)
    mod = np.abs(diff)
    unit = np.zeros_like(diff)
    nz = mod > 0
    unit[nz] = np.conj(diff[nz]) / mod[nz]
    loss = float(mod.mean())

    # d|D|/dphase_a = Re(unit * j e^{j phase}) / na = -Im(unit e^{j phase}) / na
    wa = -np.imag(unit[:, None] * ea) / (a.shape[0] * m)  # [M, na]
    wb = np.imag(unit[:, None] * eb) / (b.shape[0] * m)  # [M, nb]
    grad_a = wa.T @ om
    grad_b = wb.T @ om
    grad_om = wa @ a + wb @ b
    return loss, grad_a, grad_b, grad_om


def gaussian_cf(mean, var_diag, omega) -> complex:
    """Closed-form CF of a diagonal Gaussian."""
    mu = as_tensor(mean, "mean")
    var = as_tensor(var_diag, "var_diag")
    w = as_tensor(omega, "omega")
    if np.any(var < 0):
        raise ValueError("variances must be non-negative")
    mu, var, w = np.atleast_1d(mu), np.atleast_1d(var), np.atleast_1d(w)
    return complex(np.exp(1j * float(w @ mu) - 0.5 * float(np.sum(var * w**2))))
