"""Corpus directories: patch strips, sequence images, regions, homographies and a manifest.

Layout under the corpus root::

    manifest.json
    <seq_id>/ref.pgm              reference strip, N patches stacked vertically
    <seq_id>/e1.pgm .. e5.pgm     one strip per target image and noise variant (e/h/t/n)
    <seq_id>/homographies.txt     5 lines of 9 decimals (when geometry is known)
    <seq_id>/regions.csv          retained reference regions
    <seq_id>/images/0.pgm .. 5.pgm

Everything written is byte-deterministic: no timestamps, sorted keys, fixed number formats.
"""

import csv
import hashlib
import io
import json
import logging
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np

from patchbench.errors import (
    CorpusFormatError,
    InvalidParameterError,
    MissingCorpusError,
    StorageError,
)
from patchbench.services.geometry import (
    MIN_DETECTION_SCALE,
    NOISE_PROFILES,
    Homography,
    RegionDetection,
)
from patchbench.services.patches import PATCH_SIZE, PatchCorpus, SequencePatches, assign_splits
from patchbench.services.synthesis import SEQUENCE_LENGTH, Sequence, SequenceKind
from patchbench.store.pgm import encode_pgm, read_pgm

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
HASH_ALGO = "sha256"

VARIANT_PREFIX = {"easy": "e", "hard": "h", "tough": "t", "none": "n"}
_PREFIX_VARIANT = {v: k for k, v in VARIANT_PREFIX.items()}
_REGION_FIELDS = ("region_id", "cx", "cy", "m", "theta")


def strip_to_patches(strip: np.ndarray, source: str = "<strip>") -> np.ndarray:
    height, width = strip.shape
    if width != PATCH_SIZE or height % PATCH_SIZE:
        raise CorpusFormatError(
            f"{source}: strip of {width}x{height} is not a stack of {PATCH_SIZE}px patches"
        )
    return strip.reshape(height // PATCH_SIZE, PATCH_SIZE, PATCH_SIZE)


def patches_to_strip(patches: np.ndarray) -> np.ndarray:
    return patches.reshape(-1, PATCH_SIZE)


def image_to_bytes(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def _regions_csv(region_ids: np.ndarray, regions: list[RegionDetection]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_REGION_FIELDS)
    for rid, r in zip(region_ids, regions):
        writer.writerow([int(rid), *(f"{v:.17g}" for v in (r.cx, r.cy, r.m, r.theta))])
    return buf.getvalue().encode("utf-8")


def _homographies_text(homographies: list[Homography]) -> bytes:
    return "".join(H.to_text() + "\n" for H in homographies).encode("ascii")


class _DigestWriter:
    """Writes files under a root and remembers their sha256 for the manifest."""

    def __init__(self, root: Path):
        self.root = root
        self.files: dict[str, str] = {}

    def write(self, relpath: str, data: bytes) -> None:
        path = self.root / relpath
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(data)
        except OSError as e:
            raise StorageError(f"cannot write {path}: {e}") from e
        self.files[relpath] = hashlib.sha256(data).hexdigest()

    def entries(self) -> list[dict[str, str]]:
        return [{"path": p, HASH_ALGO: self.files[p]} for p in sorted(self.files)]


def save_corpus(
    corpus: PatchCorpus,
    out_dir: Path,
    sequences: Mapping[str, Sequence] | None = None,
    config: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Write the corpus (and, when given, the full sequences) and return the manifest.

    Args:
        corpus: Patch corpus to persist.
        out_dir: Corpus root; created if needed.
        sequences: Source sequences by id, for their images.
        config: Run configuration echoed into the manifest.

    Returns:
        The manifest as written to manifest.json.
    """
    out_dir = Path(out_dir)
    writer = _DigestWriter(out_dir)
    for s in corpus.sequences:
        base = s.seq_id
        writer.write(f"{base}/ref.pgm", encode_pgm(patches_to_strip(s.ref)))
        for variant in sorted(s.variants):
            prefix = VARIANT_PREFIX.get(variant)
            if prefix is None:
                raise InvalidParameterError(f"no strip prefix for noise variant {variant!r}")
            for k in range(SEQUENCE_LENGTH):
                strip = patches_to_strip(s.targets[variant][k])
                writer.write(f"{base}/{prefix}{k + 1}.pgm", encode_pgm(strip))
        if s.homographies is not None:
            writer.write(f"{base}/homographies.txt", _homographies_text(s.homographies))
        if s.regions:
            writer.write(f"{base}/regions.csv", _regions_csv(s.region_ids, s.regions))
        if sequences is not None and base in sequences:
            for i, img in enumerate(sequences[base].images):
                writer.write(f"{base}/images/{i}.pgm", encode_pgm(image_to_bytes(img)))

    manifest = {
        "format_version": FORMAT_VERSION,
        "master_seed": corpus.master_seed,
        "rho": corpus.rho,
        "geometry_known": corpus.geometry_known,
        "variants": sorted(corpus.variants),
        "noise_profiles": {v: NOISE_PROFILES[v].as_dict() for v in sorted(corpus.variants)},
        "sequences": [
            {"id": s.seq_id, "kind": str(s.kind), "split": s.split, "n_regions": s.n_regions}
            for s in corpus.sequences
        ],
        "config": dict(config) if config is not None else {},
        "hash_algo": HASH_ALGO,
        "files": writer.entries(),
    }
    data = (json.dumps(manifest, sort_keys=True, indent=2) + "\n").encode("utf-8")
    try:
        (out_dir / MANIFEST).write_bytes(data)
    except OSError as e:
        raise StorageError(f"cannot write manifest: {e}") from e
    logger.info(
        "wrote %d sequences, %d files to %s", len(corpus.sequences), len(writer.files), out_dir
    )
    return manifest


def read_manifest(corpus_dir: Path) -> dict[str, Any]:
    path = Path(corpus_dir) / MANIFEST
    if not path.is_file():
        raise MissingCorpusError(f"no corpus at {corpus_dir} ({MANIFEST} not found)")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CorpusFormatError(f"cannot read {path}: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        version = manifest.get("format_version") if isinstance(manifest, dict) else None
        raise CorpusFormatError(f"unsupported corpus format {version!r}")
    _check_manifest(manifest, path)
    return manifest


def _check_manifest(manifest: dict[str, Any], path: Path) -> None:
    algo = manifest.get("hash_algo", HASH_ALGO)
    try:
        unknown = [v for v in manifest["variants"] if v not in VARIANT_PREFIX]
        for entry in manifest["sequences"]:
            if not entry["id"]:
                raise ValueError("empty sequence id")
            SequenceKind(entry["kind"])
        for entry in manifest.get("files", []):
            if not (entry["path"] and entry[algo]):
                raise ValueError("empty file entry")
    except (KeyError, TypeError, ValueError) as e:
        raise CorpusFormatError(f"{path}: malformed manifest ({type(e).__name__}: {e})") from e
    if unknown:
        raise CorpusFormatError(f"{path}: unknown noise variants {unknown}")


def read_homographies(path: Path) -> list[Homography]:
    try:
        lines = [ln for ln in path.read_text(encoding="ascii").splitlines() if ln.strip()]
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    if len(lines) != SEQUENCE_LENGTH:
        raise CorpusFormatError(
            f"{path}: expected {SEQUENCE_LENGTH} homographies, got {len(lines)}"
        )
    try:
        return [Homography.from_text(ln) for ln in lines]
    except InvalidParameterError as e:
        raise CorpusFormatError(f"{path}: {e}") from e


def read_regions(path: Path) -> tuple[np.ndarray, list[RegionDetection]]:
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e
    try:
        ids = np.array([int(row["region_id"]) for row in rows], dtype=np.int64)
        regions = [
            RegionDetection(
                float(row["cx"]), float(row["cy"]), float(row["m"]), float(row["theta"])
            )
            for row in rows
        ]
    except (KeyError, ValueError) as e:
        raise CorpusFormatError(f"{path}: malformed region row ({e})") from e
    small = [int(rid) for rid, r in zip(ids, regions) if r.m < MIN_DETECTION_SCALE]
    if small:
        raise CorpusFormatError(
            f"{path}: regions {small} are below the detection scale {MIN_DETECTION_SCALE}"
        )
    return ids, regions


def _read_strips(seq_dir: Path, variants: list[str]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    ref = strip_to_patches(read_pgm(seq_dir / "ref.pgm"), str(seq_dir / "ref.pgm"))
    targets = {}
    for variant in variants:
        strips = []
        for k in range(1, SEQUENCE_LENGTH + 1):
            path = seq_dir / f"{VARIANT_PREFIX[variant]}{k}.pgm"
            if not path.is_file():
                raise CorpusFormatError(f"{seq_dir.name}: missing {path.name}")
            patches = strip_to_patches(read_pgm(path), str(path))
            if len(patches) != len(ref):
                raise CorpusFormatError(
                    f"{seq_dir.name}: {path.name} holds {len(patches)} patches, ref.pgm {len(ref)}"
                )
            strips.append(patches)
        targets[variant] = np.stack(strips)
    return ref, targets


def load_corpus(corpus_dir: Path) -> PatchCorpus:
    """Load a corpus written by save_corpus; patches come back bit-identical."""
    corpus_dir = Path(corpus_dir)
    manifest = read_manifest(corpus_dir)
    variants = list(manifest["variants"])
    sequences = []
    for entry in manifest["sequences"]:
        seq_dir = corpus_dir / entry["id"]
        if not seq_dir.is_dir():
            raise CorpusFormatError(f"sequence directory {seq_dir} is missing")
        ref, targets = _read_strips(seq_dir, variants)
        region_ids, regions = np.arange(len(ref), dtype=np.int64), []
        if (seq_dir / "regions.csv").is_file():
            region_ids, regions = read_regions(seq_dir / "regions.csv")
        homographies = None
        if (seq_dir / "homographies.txt").is_file():
            homographies = read_homographies(seq_dir / "homographies.txt")
        sequences.append(
            SequencePatches(
                seq_id=entry["id"],
                kind=SequenceKind(entry["kind"]),
                region_ids=region_ids,
                ref=ref,
                targets=targets,
                regions=regions,
                homographies=homographies,
                split=entry.get("split", "eval"),
            )
        )
    return PatchCorpus(
        sequences=sequences,
        master_seed=manifest.get("master_seed"),
        rho=float(manifest.get("rho", 5.0)),
        geometry_known=bool(manifest.get("geometry_known", True)),
    )


def load_sequence(corpus_dir: Path, seq_id: str) -> Sequence:
    """Reference and target images of a stored sequence, with its homographies."""
    entries = {e["id"]: e for e in read_manifest(corpus_dir)["sequences"]}
    if seq_id not in entries:
        raise CorpusFormatError(f"sequence {seq_id!r} is not in the manifest")
    seq_dir = Path(corpus_dir) / seq_id
    images = []
    for i in range(SEQUENCE_LENGTH + 1):
        path = seq_dir / "images" / f"{i}.pgm"
        if not path.is_file():
            raise CorpusFormatError(f"{seq_id}: image {path.name} was not stored")
        images.append(read_pgm(path).astype(np.float64) / 255.0)
    return Sequence(
        id=seq_id,
        kind=SequenceKind(entries[seq_id]["kind"]),
        ref=images[0],
        targets=images[1:],
        homographies=read_homographies(seq_dir / "homographies.txt"),
    )


def verify_corpus(corpus_dir: Path) -> list[str]:
    """Recompute the digest of every file listed in the manifest; returns the problems found."""
    corpus_dir = Path(corpus_dir)
    manifest = read_manifest(corpus_dir)
    algo = manifest.get("hash_algo", HASH_ALGO)
    problems = []
    for entry in manifest.get("files", []):
        path = corpus_dir / entry["path"]
        if not path.is_file():
            problems.append(f"{entry['path']}: missing")
            continue
        if hashlib.new(algo, path.read_bytes()).hexdigest() != entry[algo]:
            problems.append(f"{entry['path']}: {algo} mismatch")
    return problems


def _kind_from_id(seq_id: str) -> SequenceKind:
    if seq_id.startswith("v_"):
        return SequenceKind.VIEWPOINT
    if seq_id.startswith("i_"):
        return SequenceKind.ILLUMINATION
    logger.warning("%s: no v_/i_ prefix, treating it as a viewpoint sequence", seq_id)
    return SequenceKind.VIEWPOINT


def ingest_external(corpus_dir: Path, fit_fraction: float = 0.25) -> PatchCorpus:
    """Load sequence directories of patch strips that carry no manifest.

    Row j of every strip in a sequence is taken to be the same region; no geometry is read.
    """
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise MissingCorpusError(f"no directory at {corpus_dir}")
    seq_dirs = sorted(p for p in corpus_dir.iterdir() if (p / "ref.pgm").is_file())
    if not seq_dirs:
        raise MissingCorpusError(f"no sequence directories with ref.pgm under {corpus_dir}")

    sequences = []
    variant_sets = set()
    for seq_dir in seq_dirs:
        variants = sorted(
            _PREFIX_VARIANT[p.name[0]]
            for p in seq_dir.glob("?1.pgm")
            if p.name[0] in _PREFIX_VARIANT
        )
        variant_sets.add(tuple(variants))
        ref, targets = _read_strips(seq_dir, variants)
        sequences.append(
            SequencePatches(
                seq_id=seq_dir.name,
                kind=_kind_from_id(seq_dir.name),
                region_ids=np.arange(len(ref), dtype=np.int64),
                ref=ref,
                targets=targets,
            )
        )
    if len(variant_sets) > 1:
        raise CorpusFormatError(f"sequences carry different noise variants: {sorted(variant_sets)}")

    corpus = PatchCorpus(sequences=sequences, geometry_known=False)
    assign_splits(corpus, fit_fraction)
    logger.info("ingested %d sequences from %s", len(sequences), corpus_dir)
    return corpus
