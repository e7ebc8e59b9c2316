"""Corpus synthesis and descriptor evaluation runs, driven by a RunConfig."""

import logging
from collections.abc import Callable, Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from patchbench.config import RunConfig
from patchbench.errors import CorpusError, EvaluationError
from patchbench.services.descriptors import DescriptorFamily, DistanceScorer, get_family
from patchbench.services.geometry import NOISE_PROFILES, NoiseProfile, RegionDetection
from patchbench.services.metrics import mean_ap
from patchbench.services.patches import (
    PatchCorpus,
    SequencePatches,
    assign_splits,
    build_corpus,
    dominant_orientation,
    filter_contained,
    takes_turn,
)
from patchbench.services.postproc import ZcaModel, fit_zca, select_clip_threshold
from patchbench.services.seeding import derive_seed, substream
from patchbench.services.synthesis import (
    SEQUENCE_LENGTH,
    Sequence,
    SequenceKind,
    SequenceSpec,
    detect_regions,
    gen_sequence,
)
from patchbench.services.tasks import (
    ApRecord,
    CorpusDescriptors,
    Report,
    Task,
    build_matching_pairs,
    describe_corpus,
    evaluate_matching,
    evaluate_retrieval,
    evaluate_verification,
    run_matching,
    summarize,
)
from patchbench.store.corpus import load_sequence, read_manifest

logger = logging.getLogger(__name__)

MapFn = Callable[[Callable[[Any], Any], Iterable[Any]], Iterable[Any]]


@contextmanager
def worker_map(threads: int) -> Iterator[MapFn]:
    """An order-preserving map over `threads` workers; plain map for one."""
    if threads <= 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield pool.map


@dataclass(frozen=True)
class SequencePlan:
    index: int
    seq_id: str
    kind: SequenceKind
    seed: int


def plan_sequences(config: RunConfig) -> list[SequencePlan]:
    """Kinds are interleaved evenly by illum_fraction; seeds are hashed from the master seed."""
    plans = []
    for i in range(config.scenes):
        kind = (
            SequenceKind.ILLUMINATION
            if takes_turn(i, config.illum_fraction)
            else SequenceKind.VIEWPOINT
        )
        plans.append(
            SequencePlan(
                i, f"{kind.prefix}_synth{i:03d}", kind, derive_seed(config.seed, "scene", i)
            )
        )
    return plans


def generate_sequence(plan: SequencePlan, size: int) -> Sequence:
    spec = SequenceSpec(seed=plan.seed, kind=plan.kind, width=size, height=size)
    return gen_sequence(spec, plan.seq_id)


def detect_sequence_regions(seq: Sequence, seed: int, max_regions: int) -> list[RegionDetection]:
    return detect_regions(seq.ref, substream(seed, seq.id, "detect"), max_regions)


def extract_sequence(
    seq: Sequence,
    detected: list[RegionDetection],
    profiles: dict[str, NoiseProfile],
    seed: int,
    rho: float,
) -> SequencePatches:
    """Contained regions at `rho`, oriented once on the reference image, and their patches."""
    kept = filter_contained(seq, detected, list(profiles.values()), rho)
    regions = [
        detected[i].with_theta(dominant_orientation(seq.ref, detected[i], rho)) for i in kept
    ]
    return build_corpus(seq, regions, profiles, seed, rho, region_ids=kept)


def synthesize_sequence(plan: SequencePlan, config: RunConfig) -> tuple[Sequence, SequencePatches]:
    seq = generate_sequence(plan, config.image_size)
    detected = detect_sequence_regions(seq, config.seed, config.max_regions)
    profiles = {name: NOISE_PROFILES[name] for name in config.noise}
    patches = extract_sequence(seq, detected, profiles, config.seed, config.rho)
    logger.info(
        "%s: %d regions detected, %d kept", plan.seq_id, len(detected), patches.n_regions
    )
    return seq, patches


def synthesize_corpus(config: RunConfig) -> tuple[PatchCorpus, dict[str, Sequence]]:
    """Generate every sequence and its patches; output does not depend on `threads`."""
    plans = plan_sequences(config)
    with worker_map(config.threads) as pmap:
        built = list(pmap(lambda p: synthesize_sequence(p, config), plans))
    built.sort(key=lambda item: item[1].seq_id)
    corpus = PatchCorpus(
        sequences=[patches for _, patches in built], master_seed=config.seed, rho=config.rho
    )
    assign_splits(corpus, config.fit_fraction)
    return corpus, {seq.id: seq for seq, _ in built}


def fit_post_model(
    fit_corpus: PatchCorpus, family: DescriptorFamily, config: RunConfig
) -> ZcaModel:
    """ZCA on the fit split, with the clip fraction chosen by matching mAP on the same split."""
    if not fit_corpus.sequences:
        raise EvaluationError("post-processing needs sequences in the fit split")
    raw = describe_corpus(fit_corpus, family)
    sample = raw.sample()
    scorer = DistanceScorer("l2")
    variants = [v for v in config.noise if v in fit_corpus.variants]

    def matching_map(model: ZcaModel) -> float:
        records = evaluate_matching(fit_corpus, raw.post_processed(model), scorer, variants)
        return mean_ap(r.ap for r in records)

    clip = select_clip_threshold(sample, config.zca_clip_candidates, matching_map, config.zca_alpha)
    logger.info(
        "+%s: clip fraction %g selected on %d fit sequences",
        family.name, clip, len(fit_corpus.sequences),
    )
    return fit_zca(sample, clip, config.zca_alpha)


def evaluate_descriptor(
    corpus: PatchCorpus,
    descriptors: CorpusDescriptors,
    config: RunConfig,
    pmap: MapFn = map,
) -> list[ApRecord]:
    scorer = DistanceScorer(descriptors.metric)
    records: list[ApRecord] = []
    for task in config.tasks:
        if task == Task.VERIFICATION:
            records += evaluate_verification(
                corpus, descriptors, scorer, config.noise, config.n_pos, config.n_neg, config.seed
            )
        elif task == Task.MATCHING:
            records += evaluate_matching(corpus, descriptors, scorer, config.noise, pmap)
        else:
            records += evaluate_retrieval(
                corpus,
                descriptors,
                scorer,
                config.noise,
                config.n_queries,
                config.n_distractors,
                config.seed,
                pmap,
            )
    return records


def run_benchmark(corpus: PatchCorpus, config: RunConfig) -> Report:
    """Every requested descriptor on every requested task, on the eval split.

    Extraction throughput is measured over the whole eval split and reported alongside the
    summary; it is logged, not written, so result files stay byte-identical across runs.
    """
    missing = [v for v in config.noise if v not in corpus.variants]
    if missing:
        raise EvaluationError(f"corpus has no patches for noise variants {missing}")
    evaluation = corpus.split("eval")
    if not evaluation.sequences:
        raise EvaluationError("the eval split is empty")

    results: dict[str, list[ApRecord]] = {}
    throughput: dict[str, float] = {}
    with worker_map(config.threads) as pmap:
        for name in config.descriptors:
            post = name.startswith("+")
            family = get_family(name.lstrip("+"), config.brief_seed)
            label = f"+{family.name}" if post else family.name
            if post and not family.normalizable:
                raise EvaluationError(f"{family.name} is not post-processed; drop the '+'")

            model = fit_post_model(corpus.split("fit"), family, config) if post else None
            descriptors = describe_corpus(evaluation, family, model)
            throughput[label] = descriptors.throughput
            logger.info("%s: %.1f thousand descriptors per second", label, descriptors.throughput)
            results[label] = evaluate_descriptor(evaluation, descriptors, config, pmap)
            logger.info("%s: %d APs computed", label, len(results[label]))
    report = summarize(results, config.noise)
    report.throughput = throughput
    return report


def _sweep_sequences(
    corpus_dir: Path, manifest: dict[str, Any], config: RunConfig
) -> tuple[list[str], Callable[[str], Sequence]]:
    """Viewpoint sequence ids and a loader: stored images, or regenerated at sweep_image_size."""
    seq_ids = [e["id"] for e in manifest["sequences"] if e["kind"] == SequenceKind.VIEWPOINT]
    if not seq_ids:
        raise EvaluationError("the corpus has no viewpoint sequences")
    size = config.sweep_image_size
    if size is None:
        return seq_ids, lambda seq_id: load_sequence(corpus_dir, seq_id)

    stored = manifest.get("config") or {}
    planning = config.model_copy(
        update={
            "seed": manifest["master_seed"],
            "scenes": stored.get("scenes", config.scenes),
            "illum_fraction": stored.get("illum_fraction", config.illum_fraction),
        }
    )
    plans = {p.seq_id: p for p in plan_sequences(planning)}
    unknown = [s for s in seq_ids if s not in plans]
    if unknown:
        raise EvaluationError(f"cannot regenerate {', '.join(unknown)} from the master seed")
    return seq_ids, lambda seq_id: generate_sequence(plans[seq_id], size)


def rho_sweep(corpus_dir: Path, config: RunConfig) -> list[tuple[float, list[float]]]:
    """Matching mAP per (rho, target image) over the viewpoint sequences of a corpus.

    Each rho repeats what synth does at that rho under the sweep noise alone: containment
    filtering, orientation on the reference and patch extraction, from the same detections.
    A row therefore equals eval matching on a corpus synthesized with that rho. Sequences
    that keep no region at some rho are left out of that row.
    """
    manifest = read_manifest(corpus_dir)
    seed = manifest.get("master_seed")
    if seed is None:
        raise EvaluationError("the corpus records no master seed, patches cannot be re-extracted")
    seq_ids, load = _sweep_sequences(corpus_dir, manifest, config)
    max_regions = int((manifest.get("config") or {}).get("max_regions") or config.max_regions)
    profiles = {config.sweep_noise: NOISE_PROFILES[config.sweep_noise]}
    family = get_family(config.sweep_descriptor, config.brief_seed)
    scorer = DistanceScorer(family.metric)

    def sweep_sequence(seq_id: str) -> np.ndarray:
        seq = load(seq_id)
        detected = detect_sequence_regions(seq, seed, max_regions)
        aps = np.full((len(config.rhos), SEQUENCE_LENGTH), np.nan)
        for r, rho in enumerate(config.rhos):
            try:
                patches = extract_sequence(seq, detected, profiles, seed, rho)
            except CorpusError:
                logger.warning("%s: no region fits at rho=%g", seq_id, rho)
                continue
            single = PatchCorpus(sequences=[patches], master_seed=seed, rho=rho)
            descriptors = describe_corpus(single, family)
            for pair in build_matching_pairs(single, config.sweep_noise):
                aps[r, pair.target - 1] = run_matching(pair, descriptors, scorer)
        logger.debug("%s: swept %d rho values", seq_id, len(config.rhos))
        return aps

    with worker_map(config.threads) as pmap:
        per_sequence = np.stack(list(pmap(sweep_sequence, seq_ids)))
    covered = np.isfinite(per_sequence[:, :, 0]).sum(axis=0)
    for rho, count in zip(config.rhos, covered):
        if count == 0:
            raise EvaluationError(f"no viewpoint sequence keeps a region at rho={rho:g}")
        logger.info("rho=%g: %d of %d sequences", rho, count, len(seq_ids))
    table = np.nanmean(per_sequence, axis=0)
    return [(float(rho), [float(v) for v in row]) for rho, row in zip(config.rhos, table)]
