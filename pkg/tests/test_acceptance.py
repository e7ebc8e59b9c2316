"""End-to-end behaviour on a medium synthetic corpus. Run with `pytest -m slow`."""

import numpy as np
import pytest

from patchbench.config import load_run_config
from patchbench.services.benchmark import rho_sweep, run_benchmark, synthesize_corpus
from patchbench.store.corpus import save_corpus

pytestmark = pytest.mark.slow

# two of the eight sequences, one of each kind, fit the post-processing
MEDIUM_RUN = {
    "scenes": 8,
    "image_size": 320,
    "max_regions": 150,
    "noise": "easy,hard,tough",
    "descriptors": "mstd,sift,rootsift,+sift",
    "tasks": "verification,matching,retrieval",
    "n_pos": 1000,
    "n_neg": 4000,
    "n_queries": 60,
    "n_distractors": 400,
    "fit_fraction": 0.25,
}
SWEEP_RHOS = [1.0, 4.0, 12.0, 20.0]


@pytest.fixture(scope="module")
def medium(tmp_path_factory):
    out = tmp_path_factory.mktemp("medium") / "out"
    config = load_run_config(out=out, **MEDIUM_RUN)
    corpus, sequences = synthesize_corpus(config)
    save_corpus(corpus, config.corpus_dir, sequences, config.echo())
    return config, corpus, run_benchmark(corpus, config)


def _by_variant(report, descriptor: str, task: str) -> dict[str, float]:
    groups: dict[str, list[float]] = {}
    for p in report.plot:
        if p.descriptor == descriptor and p.task == task:
            groups.setdefault(p.variant, []).append(p.map)
    return {v: float(np.mean(maps)) for v, maps in groups.items()}


def _summary(report) -> dict[tuple[str, str], float]:
    return {(r.descriptor, r.task): r.map for r in report.summary}


def test_corpus_has_a_fit_split(medium):
    _, corpus, _ = medium
    fit = corpus.split("fit").sequences
    assert len(fit) == 2 and {s.kind for s in fit} == {s.kind for s in corpus.sequences}


@pytest.mark.parametrize("task", ["verification", "matching", "retrieval"])
def test_harder_noise_lowers_sift(medium, task):
    _, _, report = medium
    maps = _by_variant(report, "sift", task)
    assert maps["easy"] > maps["hard"] > maps["tough"]


def test_sift_beats_mean_and_deviation(medium):
    _, _, report = medium
    rows = _summary(report)
    assert rows[("sift", "matching")] > rows[("mstd", "matching")]
    assert rows[("sift", "retrieval")] > rows[("mstd", "retrieval")]


def test_mean_and_deviation_verifies_far_better_than_it_matches(medium):
    _, _, report = medium
    rows = _summary(report)
    assert rows[("mstd", "verification")] >= 2 * rows[("mstd", "matching")]
    assert rows[("mstd", "matching")] < 0.5 * rows[("sift", "matching")]


@pytest.mark.parametrize("descriptor", ["sift", "rootsift"])
def test_same_sequence_negatives_are_harder(medium, descriptor):
    _, _, report = medium
    points = {
        (p.variant, p.subvariant): p.map
        for p in report.plot
        if p.descriptor == descriptor and p.task == "verification"
    }
    for variant in ("easy", "hard", "tough"):
        assert points[(variant, "sameseq")] < points[(variant, "diffseq")]


def test_normalized_descriptors_match_at_least_as_well(medium):
    _, _, report = medium
    rows = _summary(report)
    assert rows[("+sift", "matching")] >= rows[("sift", "matching")]
    assert rows[("rootsift", "matching")] >= rows[("sift", "matching")]


def test_results_do_not_depend_on_threads(medium):
    config, corpus, report = medium
    threaded = run_benchmark(corpus, config.model_copy(update={"threads": 4}))
    assert threaded.records == report.records
    assert threaded.summary == report.summary


def test_larger_measurement_regions_match_better(medium):
    config, _, _ = medium
    sweep_config = config.model_copy(
        update={"rhos": SWEEP_RHOS, "sweep_descriptor": "sift", "sweep_image_size": 640}
    )
    sweep = rho_sweep(config.corpus_dir, sweep_config)
    assert [rho for rho, _ in sweep] == SWEEP_RHOS
    table = np.array([aps for _, aps in sweep])
    # every target image gains from each step up in rho
    assert (np.diff(table, axis=0) > 0).all()
