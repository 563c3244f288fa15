"""Synthetic task sequences, the continual train -> condense -> replay loop,
forgetting metrics and feature-space replay analyses.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .cf import cf_values
from .ddc import Adam, DdcConfig, DivergenceError, condense_task, draw_pairing, init_ddm_bank, minibatch
from .detector import (DetectorParams, TrainConfig, init_detector, predict_features,
                       train_task, sigmoid)
from .features import FeatureMap, backprop, extract, identity_feature_map
from .mcr import ScheduleConfig, build_replay_set, sample_alphas, vp_coefficients
from .memory import DdmBank, Memory, memory_append
from .numerics import as_batch, child_rng, sub_rng

log = logging.getLogger(__name__)

TRANSFORMS = ("shift", "scale", "rotate2d", "mix")
MODES = ("full", "no_ddc", "no_std", "no_mcr", "no_replay")


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    dim: int
    n_train_real: int = 1000
    n_train_fake: int = 1000
    n_test_real: int = 1000
    n_test_fake: int = 1000
    real_mean: float = 0.0
    real_std: float = 1.0
    transform: str = "shift"
    delta: tuple[float, ...] = (1.0,)  # broadcast to dim; shift and mix
    scale: float = 1.0  # scale and mix
    angle: float = 0.0  # rotate2d, radians, acts on the first two dims

    def __post_init__(self):
        if self.dim < 2:
            raise ValueError("task dim must be >= 2")
        for name in ("n_train_real", "n_train_fake", "n_test_real", "n_test_fake"):
            if getattr(self, name) < 1:
                raise ValueError(f"task {self.task_id}: {name} must be >= 1")
        if self.real_std < 0:
            raise ValueError(f"task {self.task_id}: real_std must be >= 0")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"task {self.task_id}: transform must be one of {TRANSFORMS}")
        if len(self.delta) not in (1, self.dim):
            raise ValueError(f"task {self.task_id}: delta needs 1 or {self.dim} entries")

    def delta_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.delta, dtype=np.float64), (self.dim,)).copy()


@dataclass
class TaskData:
    task_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def train_reals(self) -> np.ndarray:
        return self.train_x[self.train_y == 0]

    @property
    def train_fakes(self) -> np.ndarray:
        return self.train_x[self.train_y == 1]

    @property
    def test_reals(self) -> np.ndarray:
        return self.test_x[self.test_y == 0]

    @property
    def test_fakes(self) -> np.ndarray:
        return self.test_x[self.test_y == 1]


def _fakes_from_reals(spec: TaskSpec, reals: np.ndarray) -> np.ndarray:
    centred = reals - spec.real_mean
    if spec.transform == "shift":
        return reals + spec.delta_vector()
    if spec.transform == "scale":
        return spec.real_mean + spec.scale * centred
    if spec.transform == "rotate2d":
        c, s = np.cos(spec.angle), np.sin(spec.angle)
        out = centred.copy()
        out[:, 0] = c * centred[:, 0] - s * centred[:, 1]
        out[:, 1] = s * centred[:, 0] + c * centred[:, 1]
        return spec.real_mean + out
    return spec.real_mean + spec.scale * centred + spec.delta_vector()


def make_task(spec: TaskSpec, rng: np.random.Generator) -> TaskData:
    def draw(n):
        return spec.real_mean + spec.real_std * rng.standard_normal((n, spec.dim))

    tr_r, tr_f = draw(spec.n_train_real), _fakes_from_reals(spec, draw(spec.n_train_fake))
    te_r, te_f = draw(spec.n_test_real), _fakes_from_reals(spec, draw(spec.n_test_fake))
    return TaskData(
        spec.task_id,
        np.concatenate([tr_r, tr_f]),
        np.concatenate([np.zeros(len(tr_r)), np.ones(len(tr_f))]),
        np.concatenate([te_r, te_f]),
        np.concatenate([np.zeros(len(te_r)), np.ones(len(te_f))]),
    )


def make_task_sequence(specs, rng: np.random.Generator) -> list[TaskData]:
    specs = list(specs)
    if not specs:
        raise ValueError("need at least one task spec")
    if len({s.dim for s in specs}) != 1:
        raise ValueError("all tasks must share one dimension")
    return [make_task(s, child_rng(rng, f"task/{s.task_id}")) for s in specs]



def toy_shift_specs(n_tasks: int = 3, dim: int = 8, real_std: float = 0.3, separation: float = 4.0,
                    overlap: float = 0.0, n_train: int = 1000, n_test: int = 1000,
                    pattern_seed: int = 7) -> list[TaskSpec]:
    """Shift tasks sharing one real distribution N(0, real_std^2 I).

    Task t's fakes are shifted by ``separation * real_std * p_t`` where the
    unit patterns ``p_t`` have zero mean over dimensions and pairwise cosine
    ``overlap``.
    """
    if not 1 <= n_tasks < dim:
        raise ValueError("need 1 <= n_tasks < dim")
    if not -1.0 / max(n_tasks - 1, 1) < overlap < 1.0:
        raise ValueError("overlap must lie in (-1/(n_tasks-1), 1)")
    rng = sub_rng(pattern_seed, "toy/patterns")
    basis = np.linalg.qr(np.c_[np.ones(dim), rng.standard_normal((dim, n_tasks))])[0][:, 1:]
    gram = np.full((n_tasks, n_tasks), overlap)
    np.fill_diagonal(gram, 1.0)
    patterns = np.linalg.cholesky(gram) @ basis.T
    return [TaskSpec(t, dim, n_train, n_train, n_test, n_test, 0.0, real_std, "shift",
                     tuple(float(v) for v in separation * real_std * patterns[t]))
            for t in range(n_tasks)]

# -- metrics ------------------------------------------------------------------


def metric_aa_af(acc_matrix, learned_time_acc=None):
    """Per-stage average accuracy and average forgetting.

    ``acc_matrix[t][i]`` is accuracy on task i after learning task t (only
    ``i <= t`` is read). Forgetting at stage t averages, over tasks i < t,
    the drop from ``learned_time_acc[i]`` (default: the diagonal). Stage 0
    has no forgetting and reports ``None``.
    """
    rows = [list(r) for r in acc_matrix]
    n = len(rows)
    if any(len(rows[t]) < t + 1 for t in range(n)):
        raise ValueError("accuracy matrix row t needs at least t + 1 entries")
    if learned_time_acc is None:
        learned_time_acc = [rows[i][i] for i in range(n)]
    learned = list(learned_time_acc)
    if len(learned) < n - 1:
        raise ValueError("need a learned-time accuracy for every earlier task")
    aa, af = [], []
    for t in range(n):
        aa.append(float(np.mean([rows[t][i] for i in range(t + 1)])))
        af.append(float(np.mean([learned[i] - rows[t][i] for i in range(t)])) if t else None)
    return aa, af


def auc(scores, labels) -> float:
    """Rank-based ROC AUC; tied scores count one half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos, n_neg = int(np.sum(y == 1)), int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum over distinct thresholds of (recall step) * precision."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("average precision needs both classes")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y == 1)[last]
    precision = tp / (last + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _cosines(vectors, direction) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    out = np.zeros(len(vectors))
    ok = norms > 0
    out[ok] = vectors[ok] @ direction / (norms[ok] * np.linalg.norm(direction))
    return out


def _centroid(feats, what):
    c = as_batch(feats, what).mean(axis=0)
    if np.linalg.norm(c) == 0:
        raise ValueError(f"{what} centroid has zero norm")
    return c


def cosine_to_fake_centroid(replay_feats, fake_feats) -> float:
    return float(_cosines(as_batch(replay_feats, "replay_feats"), _centroid(fake_feats, "fake")).mean())


def fake_real_margin(replay_feats, fake_feats, real_feats) -> float:
    """Mean cosine to the fake centroid minus mean cosine to the real centroid."""
    r = as_batch(replay_feats, "replay_feats")
    return float(_cosines(r, _centroid(fake_feats, "fake")).mean() - _cosines(r, _centroid(real_feats, "real")).mean())


def linear_probe(old_reals, replay_fakes, test_x, test_y, fmap: FeatureMap, rng: np.random.Generator,
                 config: TrainConfig | None = None) -> tuple[float, float]:
    """Fresh linear head on (old reals -> 0, replay fakes -> 1); AUC and AP on the test set."""
    old_reals = as_batch(old_reals, "old_reals")
    replay_fakes = as_batch(replay_fakes, "replay_fakes")
    config = config or TrainConfig()
    x = np.concatenate([old_reals, replay_fakes])
    y = np.concatenate([np.zeros(len(old_reals)), np.ones(len(replay_fakes))])
    theta = train_task(init_detector(fmap.out_dim), x, y, None, fmap,
                       TrainConfig(config.lr, config.epochs, config.batch_size, 0.0), rng)
    scores = predict_features(theta, extract(fmap, as_batch(test_x, "test_x")))
    return auc(scores, test_y), average_precision(scores, test_y)


def cf_trace(batch_a, batch_b, fmap: FeatureMap, omega_grid):
    """(omega index, CF of a, CF of b) over a fixed frequency grid."""
    fa = extract(fmap, as_batch(batch_a, "batch_a"))
    fb = extract(fmap, as_batch(batch_b, "batch_b"))
    ca, cb = cf_values(fa, omega_grid), cf_values(fb, omega_grid)
    return [(i, complex(a), complex(b)) for i, (a, b) in enumerate(zip(ca, cb))]


def cf_trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["omega_id", "re_a", "im_a", "re_b", "im_b"])
    for i, a, b in rows:
        w.writerow([i, repr(a.real), repr(a.imag), repr(b.real), repr(b.imag)])
    return buf.getvalue()


# -- ablation: maps fitted to the detector's fake label only -------------------


def condense_fake_label(real_data, fake_data, fmap: FeatureMap, theta: DetectorParams, config: DdcConfig,
                        rng: np.random.Generator, task_id: int = 0) -> DdmBank:
    """Fit maps so composed samples are scored fake by the frozen detector,
    without any distribution matching."""
    reals = as_batch(real_data, "real_data")
    init_rng = child_rng(rng, "ddc/init")
    loop_rng = child_rng(rng, "ddc/loop")
    bank = init_ddm_bank(init_rng, config.K, (reals.shape[1],), config.init_mode, reals, fake_data, task_id)
    maps = np.array(bank.maps, copy=True)
    opt = Adam(maps.shape, config.lr_ddm) if config.optimizer == "adam" else None
    for it in range(config.iterations):
        rb = minibatch(loop_rng, reals, config.batch_size)
        pairing = draw_pairing(loop_rng, rb.shape[0], config.K)
        if config.alpha_mode == "fixed":
            alphas = np.full(rb.shape[0], config.fixed_a**2)
        else:
            alphas = sample_alphas(config.schedule, loop_rng, rb.shape[0])
        a, b = vp_coefficients(alphas)
        syn = a[:, None] * rb + b[:, None] * maps[pairing]
        feats = extract(fmap, syn)
        n = len(syn)
        # d/dfeatures of mean BCE(g(syn), 1): only the head gradient w.r.t. inputs
        if theta.w1 is None:
            g_feat = ((sigmoid(feats @ theta.weights + theta.bias) - 1.0) / n)[:, None] * theta.weights[None, :]
        else:
            h = np.tanh(feats @ theta.w1.T + theta.b1)
            g_z = (sigmoid(h @ theta.weights + theta.bias) - 1.0) / n
            g_feat = ((g_z[:, None] * theta.weights[None, :]) * (1 - h**2)) @ theta.w1
        g_syn = backprop(fmap, syn, g_feat)
        grad = np.zeros_like(maps)
        np.add.at(grad, pairing, b[:, None] * g_syn)
        maps = maps - (opt.direction(grad) if opt is not None else config.lr_ddm * grad)
        if not np.all(np.isfinite(maps)):
            raise DivergenceError(f"maps diverged at iteration {it}")
    return DdmBank(task_id, maps)


# -- continual loop -----------------------------------------------------------


@dataclass
class RunResult:
    seed: int
    mode: str
    acc_matrix: list
    auc_matrix: list
    aa_history: list
    af_history: list
    analysis: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)
    memory: Memory = field(default_factory=Memory)
    detector: DetectorParams | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "config": self.config,
            "acc_matrix": self.acc_matrix,
            "auc_matrix": self.auc_matrix,
            "aa_history": self.aa_history,
            "af_history": self.af_history,
            "analysis": self.analysis,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_table(self) -> str:
        """One CSV row per (stage, task) pair."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["seed", "mode", "stage", "task", "acc", "auc", "aa", "af"])
        for t, (accs, aucs) in enumerate(zip(self.acc_matrix, self.auc_matrix)):
            for i in range(t + 1):
                af = self.af_history[t]
                w.writerow([self.seed, self.mode, t, i, repr(accs[i]), repr(aucs[i]), repr(self.aa_history[t]),
                            "" if af is None else repr(af)])
        return buf.getvalue()

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["task", "iteration", "loss"])
        for task, trace in sorted(self.traces.items()):
            for it, v in enumerate(trace):
                w.writerow([task, it, repr(float(v))])
        return buf.getvalue()


def _evaluate(theta, fmap, data: TaskData) -> tuple[float, float]:
    p = predict_features(theta, extract(fmap, data.test_x))
    acc = float(np.mean((p >= 0.5) == (data.test_y == 1)))
    return acc, auc(p, data.test_y)


def _stage_analysis(memory: Memory, carriers, sequence, fmap, schedule, rng, n_per_task, standardize, composition):
    out = []
    for bank in memory.banks:
        rep = build_replay_set(Memory((bank,)), carriers, schedule, rng, n_per_task,
                               standardize=standardize, composition=composition)
        old = sequence[bank.task_id]
        rf = extract(fmap, rep.x)
        out.append({
            "task": bank.task_id,
            "cosine_to_fake_centroid": cosine_to_fake_centroid(rf, extract(fmap, old.test_fakes)),
            "fake_real_margin": fake_real_margin(rf, extract(fmap, old.test_fakes), extract(fmap, old.test_reals)),
        })
    return out


def run_continual(sequence: list[TaskData], ddc_config: DdcConfig, train_config: TrainConfig,
                  schedule: ScheduleConfig, mode: str = "full", seed: int = 0, fmap: FeatureMap | None = None,
                  n_replay_per_task: int = 1000, condense_last: bool = True,
                  bank_cache: dict | None = None) -> RunResult:
    """Train on each task in turn with replay from all earlier banks, evaluate
    on every seen test set, then condense the task into the memory.

    Mode semantics: ``no_ddc`` fits maps to the detector's fake label only;
    ``no_std`` skips map standardisation; ``no_mcr`` composes by plain
    addition ``x + d``; ``no_replay`` neither replays nor condenses.

    Distribution-matched banks do not depend on the detector, so callers
    comparing modes on one sequence and config may pass a shared
    ``bank_cache`` dict (keyed by seed and task index) to condense once.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not sequence:
        raise ValueError("empty task sequence")
    dim = sequence[0].train_x.shape[1]
    fmap = fmap or identity_feature_map(dim)
    theta = init_detector(fmap.out_dim, train_config.hidden, sub_rng(seed, "detector/init"))
    memory = Memory()
    n = len(sequence)
    acc = [[None] * n for _ in range(n)]
    aucs = [[None] * n for _ in range(n)]
    analysis, traces = [], {}
    standardize = mode != "no_std"
    composition = "additive" if mode == "no_mcr" else "vp"
    tcfg = train_config
    if mode == "no_replay":
        tcfg = TrainConfig(train_config.lr, train_config.epochs, train_config.batch_size, 0.0,
                           train_config.replay_ratio, train_config.hidden)

    for t, data in enumerate(sequence):
        replay_x = None
        if memory.banks and mode != "no_replay":
            rep = build_replay_set(memory, data.train_reals, schedule, sub_rng(seed, f"replay/{t}"),
                                   n_replay_per_task, standardize=standardize, composition=composition)
            replay_x = rep.x
            analysis.append({"stage": t, "banks": _stage_analysis(
                memory, data.train_reals, sequence, fmap, schedule, sub_rng(seed, f"analysis/{t}"),
                n_replay_per_task, standardize, composition)})
        theta = train_task(theta, data.train_x, data.train_y, replay_x, fmap, tcfg, sub_rng(seed, f"train/{t}"))
        for i in range(t + 1):
            acc[t][i], aucs[t][i] = _evaluate(theta, fmap, sequence[i])
        log.info("seed %d mode %s stage %d acc %s", seed, mode, t, acc[t][:t + 1])

        if mode == "no_replay" or (t == n - 1 and not condense_last):
            continue
        crng = sub_rng(seed, f"ddc/{t}")
        if mode == "no_ddc":
            bank = condense_fake_label(data.train_reals, data.train_fakes, fmap, theta, ddc_config, crng, data.task_id)
        elif bank_cache is not None and (seed, t) in bank_cache:
            bank, traces[data.task_id] = bank_cache[(seed, t)]
        else:
            res = condense_task(data.train_reals, data.train_fakes, fmap, ddc_config, crng, data.task_id)
            bank = res.bank
            traces[data.task_id] = res.trace.tolist()
            if bank_cache is not None:
                bank_cache[(seed, t)] = (bank, traces[data.task_id])
        memory = memory_append(memory, bank)

    acc_rows = [row[:t + 1] for t, row in enumerate(acc)]
    auc_rows = [row[:t + 1] for t, row in enumerate(aucs)]
    aa, af = metric_aa_af(acc_rows)
    config = {"ddc": asdict(ddc_config), "train": asdict(tcfg), "schedule": asdict(schedule),
              "n_replay_per_task": n_replay_per_task}
    return RunResult(seed, mode, acc_rows, auc_rows, aa, af, analysis, config, traces, memory, theta)
