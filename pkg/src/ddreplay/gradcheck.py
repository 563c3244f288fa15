"""Finite-difference checks of every hand-written gradient."""

from __future__ import annotations

from dataclasses import dataclass

from .cf import cf_discrepancy, cf_discrepancy_grads
from .ddc import compose_batch, ddc_loss, ddc_loss_grad
from .detector import init_detector, objective, objective_grad
from .features import init_feature_map
from .numerics import finite_diff_grad, max_relative_error, sub_rng
from .sampler import draw_noise, init_sampler, sampler_loss, sampler_loss_and_grad


@dataclass(frozen=True)
class SuiteResult:
    name: str
    fixtures: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _cf_fixture(rng):
    fa = rng.standard_normal((rng.integers(3, 9), 3))
    fb = rng.standard_normal((rng.integers(3, 9), 3)) + 0.5
    return fa, fb, rng.standard_normal((rng.integers(2, 7), 3))


def check_cf(rng, h=1e-5) -> float:
    fa, fb, om = _cf_fixture(rng)
    _, ga, gb, go = cf_discrepancy_grads(fa, fb, om)
    return max(
        max_relative_error(ga, finite_diff_grad(lambda a: cf_discrepancy(a, fb, om), fa, h)),
        max_relative_error(gb, finite_diff_grad(lambda b: cf_discrepancy(fa, b, om), fb, h)),
        max_relative_error(go, finite_diff_grad(lambda o: cf_discrepancy(fa, fb, o), om, h)),
    )


def check_ddc(rng, h=1e-5) -> float:
    nl = ("identity", "tanh")[int(rng.integers(0, 2))]
    fmap = init_feature_map(rng, 4, 3, nl)
    n = int(rng.integers(4, 9))
    reals = rng.standard_normal((n, 4))
    fakes = rng.standard_normal((int(rng.integers(4, 9)), 4)) + 1.0
    maps = rng.standard_normal((3, 4))
    alphas = rng.uniform(0.2, 0.9, n)
    pairing = rng.integers(0, 3, n)
    om = rng.standard_normal((5, 3))
    _, g = ddc_loss_grad(fakes, reals, maps, alphas, pairing, fmap, om)
    fd = finite_diff_grad(lambda m: ddc_loss(fakes, compose_batch(reals, m, alphas, pairing), fmap, om), maps, h)
    return max_relative_error(g, fd)


def check_sampler(rng, h=1e-5) -> float:
    psi = init_sampler(rng, 3)
    fa = rng.standard_normal((6, 3))
    fb = rng.standard_normal((8, 3)) + 0.5
    z = draw_noise(psi, rng, 5)
    _, g = sampler_loss_and_grad(psi, fa, fb, z)
    fd = finite_diff_grad(lambda v: sampler_loss(psi.from_vector(v), fa, fb, z), psi.to_vector(), h)
    return max_relative_error(g.to_vector(), fd)


def check_detector(rng, h=1e-5) -> float:
    hidden = int(rng.choice([0, 4]))
    theta = init_detector(3, hidden, rng)
    theta = theta.from_vector(rng.standard_normal(theta.to_vector().size) * 0.5)
    fc = rng.standard_normal((7, 3))
    yc = rng.integers(0, 2, 7).astype(float)
    fr = rng.standard_normal((5, 3)) + 1.0
    lam = float(rng.uniform(0.1, 2.0))
    g = objective_grad(theta, fc, yc, fr, lam)
    fd = finite_diff_grad(lambda v: objective(theta.from_vector(v), fc, yc, fr, lam), theta.to_vector(), h)
    return max_relative_error(g, fd)


SUITES = {
    "cf_discrepancy": (check_cf, 1e-4),
    "ddc_loss_grad": (check_ddc, 1e-4),
    "sampler_grad": (check_sampler, 1e-4),
    "detector_grad": (check_detector, 1e-6),
}


def run_gradchecks(seed: int = 0, fixtures: int = 10) -> list[SuiteResult]:
    if fixtures < 1:
        raise ValueError("fixtures must be >= 1")
    out = []
    for name, (fn, tol) in SUITES.items():
        rng = sub_rng(seed, f"gradcheck/{name}")
        worst = max(fn(rng) for _ in range(fixtures))
        out.append(SuiteResult(name, fixtures, float(worst), tol))
    return out


def format_report(results) -> str:
    lines = [f"{'suite':<16} {'fixtures':>8} {'max_rel_err':>12} {'tol':>8}  status"]
    for r in results:
        lines.append(f"{r.name:<16} {r.fixtures:>8d} {r.max_rel_error:>12.3e} {r.tolerance:>8.0e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
