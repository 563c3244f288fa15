"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import json
import subprocess
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import SHIFT_DIM, shift_task
from ddreplay.cf import cf_discrepancy, cf_values, gaussian_cf
from ddreplay.ddc import DdcConfig, compose_batch, condense_task, draw_pairing
from ddreplay.detector import TrainConfig
from ddreplay.features import identity_feature_map
from ddreplay.gradcheck import SUITES, run_gradchecks
from ddreplay.harness import (cosine_to_fake_centroid, linear_probe, make_task_sequence, metric_aa_af, run_continual,
                              toy_shift_specs)
from ddreplay.mcr import ScheduleConfig, build_replay_set, compose_vp, sample_alphas, standardize_bank, vp_coefficients
from ddreplay.memory import DdmBank, Memory, load_memory, memory_append, memory_from_bytes, save_memory
from ddreplay.numerics import FormatError, load_tensor, save_tensor, seeded_rng, sub_rng
from ddreplay.sampler import init_sampler, sample_frequencies, sampler_grad_step, uniform_frequencies

ROOT = Path(__file__).resolve().parents[1]
SEEDS = range(5)


# -- 1: metric arithmetic -------------------------------------------------------

def test_metric_arithmetic(criterion):
    start = time.perf_counter()
    rows = [[96.01], [93.76, 91.18], [92.45, 86.58, 97.44], [91.80, 86.03, 93.79, 92.71]]
    aa, af = metric_aa_af(rows)
    got = (round(aa[1], 2), round(af[1], 2), round(aa[2], 2), round(aa[3], 2), round(af[3], 2))
    elapsed = time.perf_counter() - start
    ok = got == (92.47, 2.25, 92.16, 91.08, 4.34) and af[0] is None and elapsed < 1.0
    assert criterion(1, "metric arithmetic", ok,
                     f"T2 AA/AF {got[0]}/{got[1]}, T3 AA {got[2]}, T4 AA/AF {got[3]}/{got[4]} in {elapsed:.4f} s")


# -- 2, 3, 4: characteristic-function properties --------------------------------

def _cf_fixtures(rng, count):
    for _ in range(count):
        dim = int(rng.integers(1, 7))
        n = int(rng.integers(1, 60))
        x = rng.standard_normal((n, dim)) * rng.uniform(0.1, 5.0) + rng.uniform(-3, 3)
        yield x, rng.standard_normal((4, dim)) * rng.uniform(0.1, 5.0)


def test_cf_axioms(criterion):
    rng = seeded_rng(2)
    worst_mod, worst_conj, origin_exact = 0.0, 0.0, True
    for x, om in _cf_fixtures(rng, 1000):
        origin_exact &= complex(cf_values(x, np.zeros(x.shape[1]))[0]) == 1 + 0j
        phi, phi_neg = cf_values(x, om), cf_values(x, -om)
        worst_mod = max(worst_mod, float(np.abs(phi).max()))
        worst_conj = max(worst_conj, float(np.abs(phi_neg - np.conj(phi)).max()))
    ok = origin_exact and worst_mod <= 1 + 1e-12 and worst_conj < 1e-12
    assert criterion(2, "CF axioms", ok, f"origin exact {origin_exact}, max modulus {worst_mod:.15f}, "
                                         f"max conjugate gap {worst_conj:.1e} over 1000 fixtures")


def test_cf_scaling(criterion):
    rng = seeded_rng(3)
    worst = 0.0
    for x, om in _cf_fixtures(rng, 1000):
        c = rng.uniform(-3, 3)
        worst = max(worst, float(np.abs(cf_values(c * x, om) - cf_values(x, c * om)).max()))
    assert criterion(3, "CF scaling", worst < 1e-12, f"max gap {worst:.1e} over 1000 (batch, c, omega) fixtures")


def test_cf_convolution(criterion):
    start = time.perf_counter()
    rng = seeded_rng(4)
    n = 100_000
    x = 0.5 + 1.0 * rng.standard_normal((n, 1))
    d = -1.0 + 0.5 * rng.standard_normal((n, 1))
    grid = np.arange(-3.0, 4.0)[:, None]
    phi_sum, phi_x, phi_d = cf_values(x + d, grid), cf_values(x, grid), cf_values(d, grid)
    closed = np.array([gaussian_cf([-0.5], [1.25], w) for w in grid])
    product_gap = float(np.abs(phi_sum - phi_x * phi_d).max())
    closed_gap = float(max(np.abs(phi_sum - closed).max(), np.abs(phi_x * phi_d - closed).max()))
    elapsed = time.perf_counter() - start
    ok = product_gap < 0.02 and closed_gap < 0.02 and elapsed < 10
    assert criterion(4, "CF convolution", ok, f"product gap {product_gap:.4f}, closed-form gap {closed_gap:.4f}, "
                                              f"{elapsed:.2f} s")


# -- 5: gradients -----------------------------------------------------------------

def test_gradient_suites(criterion):
    start = time.perf_counter()
    results = run_gradchecks(seed=0, fixtures=10)
    elapsed = time.perf_counter() - start
    expected = {"cf_discrepancy": 1e-4, "ddc_loss_grad": 1e-4, "sampler_grad": 1e-4, "detector_grad": 1e-6}
    ok = (all(r.passed and r.fixtures >= 10 for r in results) and elapsed < 60
          and {n: t for n, (_, t) in SUITES.items()} == expected and {r.name for r in results} >= set(expected))
    detail = ", ".join(f"{r.name} {r.max_rel_error:.1e}" for r in results)
    assert criterion(5, "gradient suites", ok, f"{detail} in {elapsed:.1f} s")


# -- 6: condensation recovers the shift ----------------------------------------------

def test_ddc_recovery(criterion, shift_condensations):
    ratios, errors = [], []
    for run in shift_condensations:
        trace = run["result"].trace
        ratios.append(trace[-100:].mean() / trace[:10].mean())
        fake_mean = run["fakes"].mean(axis=0)
        errors.append(np.linalg.norm(run["composed"].mean(axis=0) - fake_mean) / np.linalg.norm(fake_mean))
    ok = all(r < 0.1 for r in ratios) and all(e < 0.05 for e in errors)
    assert criterion(6, "DDC recovery", ok, f"loss ratios {np.round(ratios, 3).tolist()}, "
                                            f"mean errors {np.round(errors, 4).tolist()}")


# -- 7: the adversarial sampler finds larger discrepancies ------------------------

def test_sampler_efficacy(criterion):
    fmap = identity_feature_map(SHIFT_DIM)
    cfg = DdcConfig(iterations=0)
    q_means, u_means = [], []
    for seed in SEEDS:
        reals, fakes, _ = shift_task(seed)
        bank = condense_task(reals, fakes, fmap, cfg, sub_rng(seed, "ddc")).bank
        rng = sub_rng(seed, "sampler-efficacy")

        def batches():
            rb = reals[rng.integers(0, len(reals), 256)]
            fb = fakes[rng.integers(0, len(fakes), 256)]
            return fb, compose_batch(rb, bank, np.full(256, cfg.fixed_a**2), draw_pairing(rng, 256, bank.K))

        psi = init_sampler(rng, SHIFT_DIM, init_scale=0.1)
        for _ in range(200):
            fb, sb = batches()
            psi = sampler_grad_step(psi, fb, sb, rng, 64, 0.01)
        q, u = [], []
        for _ in range(50):
            fb, sb = batches()
            q.append(cf_discrepancy(fb, sb, sample_frequencies(psi, rng, 64)))
            u.append(cf_discrepancy(fb, sb, uniform_frequencies(rng, 64, SHIFT_DIM, 1.0)))
        q_means.append(float(np.mean(q)))
        u_means.append(float(np.mean(u)))
    wins = sum(q >= u for q, u in zip(q_means, u_means))
    ok = wins == 5 and np.mean(q_means) >= np.mean(u_means)
    assert criterion(7, "min-max efficacy", ok, f"sampler {np.round(q_means, 3).tolist()} vs uniform "
                                                f"{np.round(u_means, 3).tolist()}, {wins}/5")


# -- 8: variance-preserving composition --------------------------------------------

def test_variance_preservation(criterion):
    rng = seeded_rng(8)
    reals = rng.standard_normal((10_000, 16))
    reals = (reals - reals.mean(axis=0)) / reals.std(axis=0)
    maps = standardize_bank(rng.standard_normal((50, 16)) * 2.5 - 1.0)
    ratios = []
    for alpha in np.arange(1, 10) / 10:
        composed = compose_vp(reals, maps[rng.integers(0, 50, 10_000)], alpha)
        ratios.append(float(np.mean(composed.var(axis=0) / reals.var(axis=0))))
    window_ratios = []
    for lo, hi in [(0.3, 0.9), (0.45, 0.95), (0.6, 0.99)]:
        a, b = vp_coefficients(sample_alphas(ScheduleConfig(alpha_lo=lo, alpha_hi=hi), rng, 10_000))
        composed = a[:, None] * reals + b[:, None] * maps[rng.integers(0, 50, 10_000)]
        window_ratios.append(float(np.mean(composed.var(axis=0) / reals.var(axis=0))))
    a, b = vp_coefficients(sample_alphas(ScheduleConfig(), rng, 10_000))
    circle = float(np.abs(a**2 + b**2 - 1).max())
    ok = all(abs(r - 1) < 0.1 for r in ratios + window_ratios) and circle < 1e-12
    assert criterion(8, "variance preservation", ok,
                     f"variance ratios {min(ratios):.3f}..{max(ratios):.3f}, window sweep "
                     f"{np.round(window_ratios, 3).tolist()}, max |a^2+b^2-1| {circle:.1e}")


# -- 9: continual forgetting ordering ------------------------------------------------

@pytest.fixture(scope="module")
def ablation_runs():
    cache, runs = {}, {}
    train, ddc, schedule = TrainConfig(hidden=32), DdcConfig(), ScheduleConfig()
    start = time.perf_counter()
    for seed in SEEDS:
        seq = make_task_sequence(toy_shift_specs(), sub_rng(seed, "data"))
        for mode in ("full", "no_std", "no_mcr", "no_ddc", "no_replay"):
            runs[mode, seed] = run_continual(seq, ddc, train, schedule, mode, seed, condense_last=False,
                                             bank_cache=cache)
    return runs, time.perf_counter() - start


def _final(runs, mode, what):
    return [getattr(runs[mode, s], what)[-1] for s in SEEDS]


def test_continual_forgetting(criterion, ablation_runs):
    runs, elapsed = ablation_runs
    af = {m: _final(runs, m, "af_history") for m in ("full", "no_std", "no_mcr", "no_ddc", "no_replay")}
    aa = {m: _final(runs, m, "aa_history") for m in ("full", "no_replay")}

    def count(xs, ys):
        return sum(x < y for x, y in zip(xs, ys))

    c_rep = count(af["full"], af["no_replay"])
    c_aa = count(aa["no_replay"], aa["full"])
    c_mcr, c_ddc, c_std = (count(af["full"], af[m]) for m in ("no_mcr", "no_ddc", "no_std"))
    ok = min(c_rep, c_aa, c_mcr, c_ddc) >= 4 and elapsed < 600
    mean_af = {m: round(float(np.mean(v)), 4) for m, v in af.items()}
    assert criterion(9, "continual forgetting", ok,
                     f"AF<no_replay {c_rep}/5, AA>no_replay {c_aa}/5, AF<no_mcr {c_mcr}/5, AF<no_ddc {c_ddc}/5, "
                     f"AF<no_std {c_std}/5; mean AF {mean_af}; {elapsed:.0f} s")


def test_fake_label_maps_trail_in_mean_accuracy(ablation_runs):
    runs, _ = ablation_runs
    assert np.mean(_final(runs, "full", "aa_history")) > np.mean(_final(runs, "no_ddc", "aa_history"))


# -- 10: feature-space analysis ----------------------------------------------------

def test_feature_space_analysis(criterion):
    fmap = identity_feature_map(8)
    schedule = ScheduleConfig()
    cos_wins = probe_wins = close = 0
    rows = []
    for seed in SEEDS:
        old, cur = make_task_sequence(toy_shift_specs(), sub_rng(seed, "data"))[:2]
        bank = condense_task(old.train_reals, old.train_fakes, fmap, DdcConfig(), sub_rng(seed, "ddc/0"), 0).bank
        noise = DdmBank(0, sub_rng(seed, "noise").standard_normal(bank.maps.shape))
        ddm_rep = build_replay_set(Memory((bank,)), cur.train_reals, schedule, sub_rng(seed, "rep"), 1000).x
        noise_rep = build_replay_set(Memory((noise,)), cur.train_reals, schedule, sub_rng(seed, "rep"), 1000).x

        def probe(fakes):
            return linear_probe(old.train_reals, fakes, old.test_x, old.test_y, fmap, sub_rng(seed, "probe"))[0]

        cos_ddm = cosine_to_fake_centroid(ddm_rep, old.test_fakes)
        cos_noise = cosine_to_fake_centroid(noise_rep, old.test_fakes)
        auc_ddm, auc_noise, auc_true = probe(ddm_rep), probe(noise_rep), probe(old.train_fakes)
        cos_wins += cos_ddm > cos_noise
        probe_wins += auc_ddm > auc_noise
        close += abs(auc_ddm - auc_true) < 0.05
        rows.append(f"{cos_ddm:.3f}/{cos_noise:.3f} {auc_ddm:.4f}/{auc_noise:.4f}/{auc_true:.4f}")
    ok = cos_wins >= 4 and probe_wins >= 4 and close == 5
    assert criterion(10, "feature-space analysis", ok,
                     f"cosine wins {cos_wins}/5, probe wins {probe_wins}/5, within 0.05 of true fakes {close}/5 "
                     f"[cos ddm/noise, auc ddm/noise/true: {'; '.join(rows)}]")


# -- 11: persistence -----------------------------------------------------------------

def test_persistence(criterion, tmp_path):
    rng = seeded_rng(11)
    mem = memory_append(memory_append(Memory(), DdmBank(0, rng.standard_normal((4, 3)))),
                        DdmBank(2, rng.standard_normal((4, 3))))
    save_memory(mem, tmp_path / "m.ddmb")
    raw = (tmp_path / "m.ddmb").read_bytes()
    back = load_memory(tmp_path / "m.ddmb")
    save_memory(back, tmp_path / "m2.ddmb")
    mem_ok = (tmp_path / "m2.ddmb").read_bytes() == raw and all(
        a.maps.tobytes() == b.maps.tobytes() and a.task_id == b.task_id for a, b in zip(mem.banks, back.banks))

    t = rng.standard_normal((3, 2, 5))
    save_tensor(t, tmp_path / "t.cft")
    tensor_ok = load_tensor(tmp_path / "t.cft").tobytes() == t.tobytes()

    seq = make_task_sequence(toy_shift_specs(n_tasks=2, dim=4, n_train=100, n_test=100), sub_rng(0, "data"))
    res = run_continual(seq, DdcConfig(K=3, iterations=10, batch_size=16), TrainConfig(epochs=2), ScheduleConfig())
    text = res.to_json()
    result_ok = json.dumps(json.loads(text), indent=1, sort_keys=True) + "\n" == text

    def load_corrupt_tensor(payload):
        (tmp_path / "bad.cft").write_bytes(payload)
        return load_tensor(tmp_path / "bad.cft")

    tensor_raw = (tmp_path / "t.cft").read_bytes()
    corrupted = {
        "memory magic": lambda: memory_from_bytes(b"XXXX" + raw[4:]),
        "memory truncated": lambda: memory_from_bytes(raw[:-3]),
        "memory trailing": lambda: memory_from_bytes(raw + b"\0"),
        "tensor magic": lambda: load_corrupt_tensor(b"NOPE" + tensor_raw[4:]),
        "tensor truncated": lambda: load_corrupt_tensor(tensor_raw[:-8]),
        "tensor trailing": lambda: load_corrupt_tensor(tensor_raw + b"\0"),
    }
    rejected = []
    for name, action in corrupted.items():
        try:
            action()
        except FormatError as exc:
            rejected.append(bool(str(exc)))
        else:
            rejected.append(False)
    ok = mem_ok and tensor_ok and result_ok and all(rejected)
    assert criterion(11, "persistence", ok, f"memory {mem_ok}, tensor {tensor_ok}, result {result_ok}, "
                                            f"corruptions rejected {sum(rejected)}/{len(rejected)}")


# -- 12: determinism of the full pipeline ---------------------------------------------

def test_cli_determinism(criterion, tmp_path):
    outs = []
    for run in ("a", "b"):
        proc = subprocess.run(["ddreplay", "continual", "--config", str(ROOT / "configs" / "toy3.cfg"),
                               "--seed", "0", "--out", str(tmp_path / run)], capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(tmp_path / run / "seed_0")
    names = sorted(p.name for p in outs[0].iterdir() if p.name != "timestamps.json")
    same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    ok = same == names and len(names) == 5 and (outs[0] / "timestamps.json").exists()
    assert criterion(12, "determinism", ok, f"{len(same)}/{len(names)} payload files byte-identical ({', '.join(names)})")

