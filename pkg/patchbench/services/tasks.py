"""The three evaluation protocols: patch verification, image matching and patch retrieval.

Patches are referenced by integer triples (sequence index, image index, region index), where
image 0 is the reference and images 1..5 are the targets of a noise variant.
"""

import logging
import time
from collections.abc import Iterator, Mapping, Sequence as SequenceOf
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np

from patchbench.errors import TaskError
from patchbench.services.descriptors import DescriptorFamily, Scorer, describe
from patchbench.services.metrics import average_precision, mean_ap, sort_by_score
from patchbench.services.patches import PatchCorpus
from patchbench.services.postproc import ZcaModel, apply_post
from patchbench.services.seeding import substream
from patchbench.services.synthesis import SEQUENCE_LENGTH, SequenceKind

logger = logging.getLogger(__name__)

IMAGES_PER_GROUP = SEQUENCE_LENGTH + 1
RETRIEVAL_K = SEQUENCE_LENGTH


class Task(StrEnum):
    VERIFICATION = "verification"
    MATCHING = "matching"
    RETRIEVAL = "retrieval"


TASKS = tuple(Task)


class NegSource(StrEnum):
    SAME_SEQ = "sameseq"
    DIFF_SEQ = "diffseq"


@dataclass(frozen=True)
class ApRecord:
    task: str
    variant: str
    subvariant: str
    id: str
    ap: float


@dataclass(frozen=True, eq=False)
class CorpusLayout:
    """Group counts per sequence and their offsets in the flat group numbering."""

    counts: np.ndarray
    starts: np.ndarray

    @classmethod
    def of(cls, corpus: PatchCorpus) -> "CorpusLayout":
        counts = np.array([s.n_regions for s in corpus.sequences], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        return cls(counts=counts, starts=starts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def locate(self, groups: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(sequence, region) of flat group numbers."""
        seq = np.searchsorted(self.starts, groups, side="right") - 1
        return seq, groups - self.starts[seq]


@dataclass(eq=False)
class CorpusDescriptors:
    """Descriptors of every patch in a corpus, one flat block per noise variant.

    Rows of sequence s start at offsets[s] and run image-major: image i, region j is at
    offsets[s] + i * counts[s] + j.
    """

    family: str
    metric: str
    counts: np.ndarray
    offsets: np.ndarray
    blocks: dict[str, np.ndarray]
    extract_seconds: float = 0.0

    @property
    def throughput(self) -> float:
        """Thousands of patches described per second during extraction; 0 when not timed."""
        described = int(self.counts.sum()) * (1 + SEQUENCE_LENGTH * len(self.blocks))
        if self.extract_seconds <= 0:
            return 0.0
        return described / self.extract_seconds / 1000.0

    def take(
        self, variant: str, seq: np.ndarray, image: np.ndarray, region: np.ndarray
    ) -> np.ndarray:
        rows = self.offsets[seq] + np.asarray(image) * self.counts[seq] + region
        return self.blocks[variant][rows]

    def image(self, variant: str, seq: int, image: int) -> np.ndarray:
        start = self.offsets[seq] + image * self.counts[seq]
        return self.blocks[variant][start : start + self.counts[seq]]

    def sample(self) -> np.ndarray:
        """Every row of every variant, for unsupervised fitting."""
        return np.concatenate([self.blocks[v] for v in sorted(self.blocks)])

    def post_processed(self, model: ZcaModel) -> "CorpusDescriptors":
        return CorpusDescriptors(
            family=self.family,
            metric=self.metric,
            counts=self.counts,
            offsets=self.offsets,
            blocks={v: apply_post(block, model) for v, block in self.blocks.items()},
            extract_seconds=self.extract_seconds,
        )


def describe_corpus(
    corpus: PatchCorpus, family: DescriptorFamily, post: ZcaModel | None = None
) -> CorpusDescriptors:
    """Extract descriptors for all patches; reference patches are described once."""
    if post is not None and not family.normalizable:
        raise TaskError(f"post-processing is not defined for {family.name}")
    if not corpus.sequences:
        raise TaskError("corpus is empty")
    counts = np.array([s.n_regions for s in corpus.sequences], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(IMAGES_PER_GROUP * counts)[:-1]]).astype(np.int64)

    start = time.perf_counter()
    refs = [describe(family, s.ref) for s in corpus.sequences]
    blocks = {}
    for variant in corpus.variants:
        parts = []
        for s, ref in zip(corpus.sequences, refs):
            strips = s.targets[variant].reshape(-1, *s.ref.shape[1:])
            parts.extend([ref, describe(family, strips)])
        blocks[variant] = np.concatenate(parts)
    raw = CorpusDescriptors(
        family=family.name,
        metric=family.metric,
        counts=counts,
        offsets=offsets,
        blocks=blocks,
        extract_seconds=time.perf_counter() - start,
    )
    return raw.post_processed(post) if post is not None else raw


def _check_variant(corpus: PatchCorpus, variant: str) -> None:
    if not corpus.sequences:
        raise TaskError("corpus is empty")
    if variant not in corpus.variants:
        raise TaskError(f"noise variant {variant!r} not in corpus ({', '.join(corpus.variants)})")


# ---------------------------------------------------------------------------------------------
# verification


@dataclass(eq=False)
class VerificationSet:
    """Pairs (a[i], b[i]) with label +1 if they correspond and -1 otherwise.

    a and b are (n, 3) arrays of (sequence, image, region).
    """

    variant: str
    neg_source: NegSource
    a: np.ndarray
    b: np.ndarray
    labels: np.ndarray

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    @property
    def n_neg(self) -> int:
        return int(np.count_nonzero(self.labels == -1))


def _refs(seq: np.ndarray, image: np.ndarray, region: np.ndarray) -> np.ndarray:
    return np.column_stack([seq, image, region]).astype(np.int64)


def _positive_pairs(layout: CorpusLayout, n: int, rng: np.random.Generator):
    seq, region = layout.locate(rng.integers(0, layout.total, size=n))
    first = rng.integers(0, IMAGES_PER_GROUP, size=n)
    second = (first + rng.integers(1, IMAGES_PER_GROUP, size=n)) % IMAGES_PER_GROUP
    return _refs(seq, first, region), _refs(seq, second, region)


def _same_seq_negatives(layout: CorpusLayout, n: int, rng: np.random.Generator):
    eligible = np.where(layout.counts >= 2, layout.counts, 0)
    seq = rng.choice(len(eligible), size=n, p=eligible / eligible.sum())
    count = layout.counts[seq]
    first = np.floor(rng.random(n) * count).astype(np.int64)
    second = (first + 1 + np.floor(rng.random(n) * (count - 1)).astype(np.int64)) % count
    images = rng.integers(0, IMAGES_PER_GROUP, size=(2, n))
    return _refs(seq, images[0], first), _refs(seq, images[1], second)


def _diff_seq_negatives(layout: CorpusLayout, n: int, rng: np.random.Generator):
    first = rng.integers(0, layout.total, size=n)
    seq_a, region_a = layout.locate(first)
    # uniform over groups outside the first sequence
    outside = np.floor(rng.random(n) * (layout.total - layout.counts[seq_a])).astype(np.int64)
    second = outside + np.where(outside >= layout.starts[seq_a], layout.counts[seq_a], 0)
    seq_b, region_b = layout.locate(second)
    images = rng.integers(0, IMAGES_PER_GROUP, size=(2, n))
    return _refs(seq_a, images[0], region_a), _refs(seq_b, images[1], region_b)


def build_verification(
    corpus: PatchCorpus,
    variant: str,
    neg_source: NegSource,
    n_pos: int,
    n_neg: int,
    rng: np.random.Generator,
) -> VerificationSet:
    """Sample corresponding pairs within groups and non-corresponding pairs by `neg_source`.

    Pairs are drawn with replacement and come back in a seeded random order; the requested
    counts may not exceed the number of distinct pairs available.
    """
    _check_variant(corpus, variant)
    neg_source = NegSource(neg_source)
    if n_pos < 1 or n_neg < 1:
        raise TaskError("verification needs at least one positive and one negative pair")
    layout = CorpusLayout.of(corpus)
    counts = layout.counts.astype(np.float64)
    pairs_per_group = IMAGES_PER_GROUP * (IMAGES_PER_GROUP - 1) // 2
    pos_population = pairs_per_group * layout.total
    patch_pairs = IMAGES_PER_GROUP**2 / 2.0
    if neg_source is NegSource.SAME_SEQ:
        neg_population = patch_pairs * float(np.sum(counts * (counts - 1)))
    else:
        neg_population = patch_pairs * float(counts.sum() ** 2 - np.sum(counts**2))
    if n_pos > pos_population or n_neg > neg_population:
        raise TaskError(
            f"corpus offers {pos_population} positive and {neg_population:.0f} {neg_source} "
            f"negative pairs; asked for {n_pos} and {n_neg}"
        )

    pos_a, pos_b = _positive_pairs(layout, n_pos, rng)
    if neg_source is NegSource.SAME_SEQ:
        neg_a, neg_b = _same_seq_negatives(layout, n_neg, rng)
    else:
        neg_a, neg_b = _diff_seq_negatives(layout, n_neg, rng)
    labels = np.concatenate([np.ones(n_pos, np.int8), -np.ones(n_neg, np.int8)])
    # tied scores keep input order, so no label may sit in a block
    order = rng.permutation(n_pos + n_neg)
    return VerificationSet(
        variant=variant,
        neg_source=neg_source,
        a=np.concatenate([pos_a, neg_a])[order],
        b=np.concatenate([pos_b, neg_b])[order],
        labels=labels[order],
    )


def run_verification(
    vset: VerificationSet, descriptors: CorpusDescriptors, scorer: Scorer
) -> float:
    da = descriptors.take(vset.variant, *vset.a.T)
    db = descriptors.take(vset.variant, *vset.b.T)
    return average_precision(sort_by_score(scorer.pairwise(da, db), vset.labels))


def evaluate_verification(
    corpus: PatchCorpus,
    descriptors: CorpusDescriptors,
    scorer: Scorer,
    variants: SequenceOf[str],
    n_pos: int,
    n_neg: int,
    seed: int,
) -> list[ApRecord]:
    records = []
    for variant in variants:
        for source in NegSource:
            rng = substream(seed, Task.VERIFICATION, variant, source)
            vset = build_verification(corpus, variant, source, n_pos, n_neg, rng)
            ap = run_verification(vset, descriptors, scorer)
            records.append(ApRecord(Task.VERIFICATION, variant, source, "set", ap))
    return records


# ---------------------------------------------------------------------------------------------
# matching


@dataclass(frozen=True)
class MatchingPair:
    """Reference image of sequence `seq` against its target `target` (1..5); rows correspond."""

    seq: int
    seq_id: str
    kind: SequenceKind
    variant: str
    target: int


def build_matching_pairs(corpus: PatchCorpus, variant: str) -> list[MatchingPair]:
    _check_variant(corpus, variant)
    return [
        MatchingPair(seq=i, seq_id=s.seq_id, kind=s.kind, variant=variant, target=k)
        for i, s in enumerate(corpus.sequences)
        for k in range(1, SEQUENCE_LENGTH + 1)
    ]


def run_matching(pair: MatchingPair, descriptors: CorpusDescriptors, scorer: Scorer) -> float:
    """Nearest-neighbour assignment of reference patches; AP with K fixed to N."""
    queries = descriptors.image(pair.variant, pair.seq, 0)
    candidates = descriptors.image(pair.variant, pair.seq, pair.target)
    n = len(queries)
    if n == 0:
        raise TaskError(f"{pair.seq_id}: no patches to match")
    scores = scorer.cross(queries, candidates)
    # argmax returns the lowest index among ties
    sigma = np.argmax(scores, axis=1)
    best = scores[np.arange(n), sigma]
    labels = np.where(sigma == np.arange(n), 1, -1)
    return average_precision(sort_by_score(best, labels), k=n)


def evaluate_matching(
    corpus: PatchCorpus,
    descriptors: CorpusDescriptors,
    scorer: Scorer,
    variants: SequenceOf[str],
    map_fn=map,
) -> list[ApRecord]:
    pairs = [p for variant in variants for p in build_matching_pairs(corpus, variant)]
    aps = map_fn(lambda p: run_matching(p, descriptors, scorer), pairs)
    return [
        ApRecord(Task.MATCHING, p.variant, p.kind, f"{p.seq_id}:{p.target}", ap)
        for p, ap in zip(pairs, aps)
    ]


# ---------------------------------------------------------------------------------------------
# retrieval


@dataclass(frozen=True, eq=False)
class RetrievalCollection:
    """A query patch and a shuffled, labelled pool: +1 corresponding, 0 ignored, -1 distractor."""

    variant: str
    query: np.ndarray
    pool: np.ndarray
    labels: np.ndarray
    k: int = RETRIEVAL_K


@dataclass(eq=False)
class RetrievalCollections:
    """Queries drawn once; each pool is materialized on demand from its own substream.

    Query choice and distractor draws do not depend on the noise variant, so the same
    collections are compared across variants.
    """

    variant: str
    queries: np.ndarray
    n_distractors: int
    seed: int
    layout: CorpusLayout
    seq_ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self) -> Iterator[RetrievalCollection]:
        return (self.collection(i) for i in range(len(self)))

    def collection(self, index: int) -> RetrievalCollection:
        seq, region = (int(v) for v in self.queries[index])
        n = int(self.layout.counts[seq])

        targets = np.arange(1, SEQUENCE_LENGTH + 1)
        images = np.repeat(targets, n)
        regions = np.tile(np.arange(n), SEQUENCE_LENGTH)
        same = _refs(np.full(len(images), seq), images, regions)
        same_labels = np.where(regions == region, 1, 0).astype(np.int8)

        outside = self.layout.total - n
        rng = substream(self.seed, Task.RETRIEVAL, "pool", index)
        draws = rng.choice(IMAGES_PER_GROUP * outside, size=self.n_distractors, replace=False)
        image, group = np.divmod(draws, outside)
        group = group + np.where(group >= self.layout.starts[seq], n, 0)
        d_seq, d_region = self.layout.locate(group)

        pool = np.concatenate([same, _refs(d_seq, image, d_region)])
        labels = np.concatenate([same_labels, -np.ones(self.n_distractors, np.int8)])
        order = rng.permutation(len(pool))
        return RetrievalCollection(
            variant=self.variant,
            query=np.array([seq, 0, region], dtype=np.int64),
            pool=pool[order],
            labels=labels[order],
        )

    def collection_id(self, index: int) -> str:
        seq, region = (int(v) for v in self.queries[index])
        name = self.seq_ids[seq] if self.seq_ids else str(seq)
        return f"{name}:{region}"


def build_retrieval(
    corpus: PatchCorpus,
    variant: str,
    n_queries: int,
    n_distractors: int,
    seed: int,
) -> RetrievalCollections:
    """Pick query groups and prepare distractor draws from the other sequences."""
    _check_variant(corpus, variant)
    if len(corpus.sequences) < 2:
        raise TaskError("retrieval needs at least two sequences")
    layout = CorpusLayout.of(corpus)
    if n_queries < 1 or n_queries > layout.total:
        raise TaskError(f"cannot draw {n_queries} queries from {layout.total} regions")
    smallest_outside = IMAGES_PER_GROUP * (layout.total - int(layout.counts.max()))
    if n_distractors > smallest_outside:
        raise TaskError(
            f"cannot draw {n_distractors} distractors; some sequence has only "
            f"{smallest_outside} patches outside it"
        )
    rng = substream(seed, Task.RETRIEVAL, "queries")
    groups = np.sort(rng.choice(layout.total, size=n_queries, replace=False))
    seq, region = layout.locate(groups)
    return RetrievalCollections(
        variant=variant,
        queries=np.column_stack([seq, region]).astype(np.int64),
        n_distractors=n_distractors,
        seed=seed,
        layout=layout,
        seq_ids=[s.seq_id for s in corpus.sequences],
    )


def run_retrieval(
    coll: RetrievalCollection, descriptors: CorpusDescriptors, scorer: Scorer
) -> float:
    query = descriptors.take(coll.variant, *coll.query[:, None])
    pool = descriptors.take(coll.variant, *coll.pool.T)
    scores = scorer.cross(query, pool)[0]
    return average_precision(sort_by_score(scores, coll.labels), k=coll.k)


def evaluate_retrieval(
    corpus: PatchCorpus,
    descriptors: CorpusDescriptors,
    scorer: Scorer,
    variants: SequenceOf[str],
    n_queries: int,
    n_distractors: int,
    seed: int,
    map_fn=map,
) -> list[ApRecord]:
    records = []
    for variant in variants:
        colls = build_retrieval(corpus, variant, n_queries, n_distractors, seed)

        def score_one(i: int, colls: RetrievalCollections = colls) -> float:
            return run_retrieval(colls.collection(i), descriptors, scorer)

        aps = map_fn(score_one, range(len(colls)))
        records.extend(
            ApRecord(Task.RETRIEVAL, variant, "", colls.collection_id(i), ap)
            for i, ap in enumerate(aps)
        )
    return records


# ---------------------------------------------------------------------------------------------
# summary


@dataclass(frozen=True)
class SummaryRow:
    descriptor: str
    task: str
    map: float


@dataclass(frozen=True)
class PlotPoint:
    descriptor: str
    task: str
    variant: str
    subvariant: str
    map: float


@dataclass
class Report:
    records: dict[str, list[ApRecord]]
    summary: list[SummaryRow]
    plot: list[PlotPoint]
    # thousands of patches per second, by descriptor; never written to result files
    throughput: dict[str, float] = field(default_factory=dict)


def summarize(
    results: Mapping[str, SequenceOf[ApRecord]], variants: SequenceOf[str]
) -> Report:
    """Per-(variant, subvariant) mean AP and the task bar: the mean over those groups.

    `results` maps a descriptor name to its records; output follows its insertion order and
    the fixed task order.
    """
    summary, plot = [], []
    for descriptor, records in results.items():
        for task in TASKS:
            task_records = [r for r in records if r.task == task]
            if not task_records:
                continue
            groups: dict[tuple[str, str], list[float]] = {}
            for r in task_records:
                groups.setdefault((r.variant, r.subvariant), []).append(r.ap)
            missing = set(variants) - {v for v, _ in groups}
            if missing:
                raise TaskError(
                    f"{descriptor}/{task}: missing noise variants {', '.join(sorted(missing))}"
                )
            order = {v: i for i, v in enumerate(variants)}
            keys = sorted(groups, key=lambda key: (order.get(key[0], len(order)), key))
            means = []
            for variant, subvariant in keys:
                value = mean_ap(groups[(variant, subvariant)])
                means.append(value)
                plot.append(PlotPoint(descriptor, task, variant, subvariant, value))
            summary.append(SummaryRow(descriptor, task, mean_ap(means)))
    return Report(records={k: list(v) for k, v in results.items()}, summary=summary, plot=plot)
