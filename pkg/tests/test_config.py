from pathlib import Path

import pytest

from ddreplay.config import ConfigError, config_from_text, parse_config

ROOT = Path(__file__).resolve().parents[1]


def test_defaults():
    cfg = config_from_text("")
    assert (cfg.ddc.K, cfg.ddc.iterations, cfg.ddc.lr_ddm) == (50, 3000, 0.01)
    assert cfg.run.seeds == (0,) and cfg.run.mode == "full" and len(cfg.tasks) == 3
    assert cfg.ddc.schedule == cfg.schedule


def test_schedule_section_reaches_condensation():
    cfg = config_from_text("schedule.alpha_lo = 0.5\nschedule.alpha_hi = 0.9\n")
    assert cfg.ddc.schedule.alpha_lo == 0.5 and cfg.schedule.alpha_hi == 0.9


def test_window_error_names_both_keys():
    with pytest.raises(ConfigError, match="alpha_lo.*alpha_hi"):
        config_from_text("schedule.alpha_lo = 0.9\nschedule.alpha_hi = 0.5\n")


@pytest.mark.parametrize("text, pattern", [
    ("foo = 1\n", "unknown key foo"),
    ("ddc.foo = 1\n", "unknown key ddc.foo"),
    ("ddc.schedule = x\n", "unknown key ddc.schedule"),
    ("ddc.K = 5\nddc.K = 6\n", "duplicate key ddc.K"),
    ("ddc.K = five\n", "ddc.K: expected int"),
    ("ddc.K = 0\n", "ddc"),
    ("run.condense_last = maybe\n", "run.condense_last: expected bool"),
    ("run.seeds = \n", "run.seeds"),
    ("justtext\n", "expected key = value"),
    ("tasks.preset = other\n", "tasks.preset"),
    ("tasks.n_tasks = 9\n", "tasks:"),
    ("task.0.dim = 3\ntasks.dim = 3\n", "not both"),
    ("task.0.real_std = 1\n", "task.0.dim is required"),
    ("task.1.dim = 3\n", "without gaps"),
    ("task.0.dim = 3\ntask.1.dim = 4\n", "must agree"),
    ("task.0.task_id = 3\n", "unknown key"),
])
def test_rejections(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        config_from_text(text)


def test_explicit_tasks():
    cfg = config_from_text("""
# two hand-written tasks
task.0.dim = 3
task.0.transform = scale
task.0.scale = 2.0
task.1.dim = 3
task.1.delta = 1.0, 0.0, -1.0
""")
    assert [t.transform for t in cfg.tasks] == ["scale", "shift"]
    assert cfg.tasks[1].delta == (1.0, 0.0, -1.0) and cfg.tasks[1].task_id == 1


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "absent.cfg")


def test_shipped_config_parses():
    cfg = parse_config(ROOT / "configs" / "toy3.cfg")
    assert cfg.train.hidden == 32 and cfg.run.seeds == (0, 1, 2, 3, 4) and not cfg.run.condense_last
    assert cfg.tasks[0].real_std == 0.3


def test_as_dict_is_plain():
    d = config_from_text("run.seeds = 1,2\n").as_dict()
    assert tuple(d["run"]["seeds"]) == (1, 2)
    assert d["ddc"]["K"] == 50
