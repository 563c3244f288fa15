import pytest
from hypothesis import HealthCheck, settings

from ddreplay.ddc import DdcConfig, compose_batch, composition_alphas, condense_task, draw_pairing
from ddreplay.features import identity_feature_map
from ddreplay.numerics import sub_rng

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SHIFT_DIM = 8
SHIFT_DELTA = 2.0
SHIFT_STD = 0.1


def shift_task(seed, n=2000):
    rng = sub_rng(seed, "data")
    reals = SHIFT_STD * rng.standard_normal((n, SHIFT_DIM))
    fakes = SHIFT_STD * rng.standard_normal((n, SHIFT_DIM)) + SHIFT_DELTA
    return reals, fakes, rng


@pytest.fixture(scope="session")
def shift_condensations():
    """Default-config condensation of the toy shift task for seeds 0..4."""
    out = []
    fmap = identity_feature_map(SHIFT_DIM)
    cfg = DdcConfig()
    for seed in range(5):
        reals, fakes, rng = shift_task(seed)
        res = condense_task(reals, fakes, fmap, cfg, sub_rng(seed, "ddc"))
        val = SHIFT_STD * rng.standard_normal((5000, SHIFT_DIM))
        pairing = draw_pairing(rng, 5000, cfg.K)
        composed = compose_batch(val, res.bank, composition_alphas(res, cfg, pairing, rng), pairing)
        out.append({"seed": seed, "reals": reals, "fakes": fakes, "result": res, "composed": composed})
    return out


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
