"""Shared fixtures: hand-built patch corpora and small seeded synthetic corpora."""

from __future__ import annotations

import numpy as np
import pytest

from patchbench.config import RunConfig, load_run_config
from patchbench.services.benchmark import synthesize_corpus
from patchbench.services.patches import PATCH_SIZE, PatchCorpus, SequencePatches
from patchbench.services.synthesis import (
    SEQUENCE_LENGTH,
    Sequence,
    SequenceKind,
    SequenceSpec,
    gen_sequence,
)
from patchbench.services.tasks import IMAGES_PER_GROUP, CorpusDescriptors, CorpusLayout
from patchbench.store.corpus import save_corpus

# small runs that still exercise every protocol
SMALL_RUN = {
    "scenes": 4,
    "image_size": 256,
    "max_regions": 80,
    "noise": "easy",
    "descriptors": "mstd,sift",
    "n_pos": 100,
    "n_neg": 200,
    "n_queries": 10,
    "n_distractors": 40,
    "fit_fraction": 0.0,
}


def small_run_flags() -> list[str]:
    flags = []
    for key, value in SMALL_RUN.items():
        flag = {"descriptors": "desc"}.get(key, key).replace("_", "-")
        flags += [f"--{flag}", str(value)]
    return flags


def make_corpus(
    n_seqs: int = 4,
    n_regions: int = 6,
    variants: tuple[str, ...] = ("easy",),
    jitter: float = 6.0,
    seed: int = 0,
) -> PatchCorpus:
    """Random reference patches; target patches are the reference plus Gaussian jitter."""
    rng = np.random.default_rng(seed)
    sequences = []
    for s in range(n_seqs):
        kind = SequenceKind.VIEWPOINT if s % 2 == 0 else SequenceKind.ILLUMINATION
        ref = rng.integers(0, 256, size=(n_regions, PATCH_SIZE, PATCH_SIZE)).astype(np.float64)
        targets = {}
        for variant in variants:
            noisy = ref[None] + rng.normal(0.0, jitter, size=(SEQUENCE_LENGTH, *ref.shape))
            targets[variant] = np.clip(np.round(noisy), 0, 255).astype(np.uint8)
        sequences.append(
            SequencePatches(
                seq_id=f"{kind.prefix}_t{s:02d}",
                kind=kind,
                region_ids=np.arange(n_regions, dtype=np.int64),
                ref=ref.astype(np.uint8),
                targets=targets,
            )
        )
    sequences.sort(key=lambda s: s.seq_id)
    return PatchCorpus(sequences=sequences, master_seed=seed)


def oracle_descriptors(corpus: PatchCorpus) -> CorpusDescriptors:
    """One-dimensional descriptors holding the flat group number: a ground-truth scorer."""
    layout = CorpusLayout.of(corpus)
    offsets = np.concatenate([[0], np.cumsum(IMAGES_PER_GROUP * layout.counts)[:-1]])
    blocks = {}
    for variant in corpus.variants:
        rows = [
            np.tile(start + np.arange(count), IMAGES_PER_GROUP)
            for start, count in zip(layout.starts, layout.counts)
        ]
        blocks[variant] = np.concatenate(rows).astype(np.float64)[:, None]
    return CorpusDescriptors(
        family="oracle",
        metric="l2",
        counts=layout.counts,
        offsets=offsets.astype(np.int64),
        blocks=blocks,
    )


@pytest.fixture
def tiny_corpus() -> PatchCorpus:
    return make_corpus()


@pytest.fixture(scope="session")
def viewpoint_sequence() -> Sequence:
    spec = SequenceSpec(seed=3, kind=SequenceKind.VIEWPOINT, width=256, height=256)
    return gen_sequence(spec, "v_fixture")


@pytest.fixture(scope="session")
def illumination_sequence() -> Sequence:
    spec = SequenceSpec(seed=4, kind=SequenceKind.ILLUMINATION, width=256, height=256)
    return gen_sequence(spec, "i_fixture")


@pytest.fixture(scope="session")
def small_config(tmp_path_factory) -> RunConfig:
    return load_run_config(out=tmp_path_factory.mktemp("small") / "out", **SMALL_RUN)


@pytest.fixture(scope="session")
def synthetic(small_config):
    """(corpus, sequences) of the small seeded run."""
    return synthesize_corpus(small_config)


@pytest.fixture(scope="session")
def stored_corpus(synthetic, small_config, tmp_path_factory):
    """The small seeded run saved with its images, as the CLI would write it."""
    corpus, sequences = synthetic
    corpus_dir = tmp_path_factory.mktemp("stored") / "corpus"
    save_corpus(corpus, corpus_dir, sequences, small_config.echo())
    return corpus_dir
