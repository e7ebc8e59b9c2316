import json
from pathlib import Path

import pytest

from patchbench.config import SCALE_COUNTS, load_run_config, read_config_file
from patchbench.errors import ConfigError


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch, tmp_path):
    # no stray PATCHBENCH_ variables or .env file from the developer's shell
    for name in ("SEED", "SCENES", "NOISE", "DESCRIPTORS", "SCALE"):
        monkeypatch.delenv(f"PATCHBENCH_{name}", raising=False)
    monkeypatch.chdir(tmp_path)


def test_defaults():
    config = load_run_config()
    assert (config.seed, config.scenes, config.image_size, config.rho) == (7, 16, 320, 5.0)
    assert config.noise == ["easy", "hard", "tough"]
    assert config.descriptors[-2:] == ["+sift", "+rootsift"]
    assert config.threads == 1 and config.fit_fraction == 0.25
    counts = (
        config.max_regions,
        config.n_pos,
        config.n_neg,
        config.n_queries,
        config.n_distractors,
    )
    assert counts == SCALE_COUNTS["desk"] == (200, 2_000, 10_000, 200, 2_000)


def test_paper_scale_counts_and_explicit_overrides():
    config = load_run_config(scale="paper", n_pos=500)
    assert config.max_regions == 1300
    assert config.n_pos == 500
    assert config.n_neg == 1_000_000


def test_paths():
    config = load_run_config(out="runs/a")
    assert config.corpus_dir == Path("runs/a/corpus")
    assert config.results_dir == Path("runs/a/results")


def test_environment(monkeypatch):
    monkeypatch.setenv("PATCHBENCH_SEED", "11")
    monkeypatch.setenv("PATCHBENCH_NOISE", "easy,tough")
    config = load_run_config()
    assert config.seed == 11
    assert config.noise == ["easy", "tough"]


def test_precedence_env_then_file_then_flags(monkeypatch, tmp_path):
    monkeypatch.setenv("PATCHBENCH_SEED", "11")
    monkeypatch.setenv("PATCHBENCH_SCENES", "5")
    path = tmp_path / "run.cfg"
    path.write_text("PATCHBENCH_SEED=12\nnoise=hard\n")
    from_file = load_run_config(path)
    assert (from_file.seed, from_file.scenes, from_file.noise) == (12, 5, ["hard"])
    flagged = load_run_config(path, seed=13, scenes=None)
    assert (flagged.seed, flagged.scenes) == (13, 5)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "missing.cfg")
    path = tmp_path / "bad.cfg"
    path.write_text("seed=1\ncolour=blue\n")
    with pytest.raises(ConfigError):
        load_run_config(path)


@pytest.mark.parametrize(
    "overrides",
    [
        {"scenes": 1},
        {"image_size": 32},
        {"rho": 0},
        {"noise": "brutal"},
        {"noise": ""},
        {"descriptors": "orb"},
        {"tasks": "ranking"},
        {"zca_clip_candidates": "0,0.1"},
        {"rhos": "1,-4"},
        {"scale": "huge"},
        {"fit_fraction": 1.0},
        {"sweep_noise": "brutal"},
    ],
)
def test_invalid_values_are_config_errors(overrides):
    with pytest.raises(ConfigError):
        load_run_config(**overrides)


def test_lists_accept_comma_strings():
    config = load_run_config(descriptors="+SIFT, mstd,rsift", rhos="1,4", tasks="matching")
    assert config.descriptors == ["+sift", "mstd", "rsift"]
    assert config.rhos == [1.0, 4.0]
    assert config.tasks == ["matching"]
    assert load_run_config(noise=["hard"]).noise == ["hard"]


def test_echo_leaves_out_where_and_how_fast():
    config = load_run_config(out="elsewhere", threads=4, seed=3)
    echo = config.echo()
    assert "out" not in echo and "threads" not in echo
    assert echo["seed"] == 3
    assert json.loads(json.dumps(echo)) == echo
    assert load_run_config(out="x", threads=2, seed=3).echo() == echo
