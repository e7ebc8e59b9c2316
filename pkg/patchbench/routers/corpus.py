from pathlib import Path

from fastapi import APIRouter, Depends, HTTPException

from patchbench.config import settings
from patchbench.errors import CorpusFormatError, MissingCorpusError, StorageError
from patchbench.schemas import FileEntry, ManifestOut, SequenceOut
from patchbench.store.corpus import read_homographies, read_manifest

router = APIRouter(prefix="/corpus", tags=["corpus"])


def get_corpus_dir() -> Path:
    return settings.CORPUS_DIR


def _manifest(corpus_dir: Path) -> dict:
    try:
        return read_manifest(corpus_dir)
    except MissingCorpusError:
        raise HTTPException(status_code=404, detail="No corpus; run `patchbench synth` first")
    except CorpusFormatError as e:
        raise HTTPException(status_code=500, detail=str(e))


@router.get("/manifest", response_model=ManifestOut)
def get_manifest(corpus_dir: Path = Depends(get_corpus_dir)):
    return _manifest(corpus_dir)


@router.get("/sequences/{seq_id}", response_model=SequenceOut)
def get_sequence(seq_id: str, corpus_dir: Path = Depends(get_corpus_dir)):
    manifest = _manifest(corpus_dir)
    entry = next((e for e in manifest["sequences"] if e["id"] == seq_id), None)
    if entry is None:
        raise HTTPException(status_code=404, detail="Sequence not found")

    homographies = None
    h_path = Path(corpus_dir) / seq_id / "homographies.txt"
    if h_path.is_file():
        try:
            homographies = [H.h.ravel().tolist() for H in read_homographies(h_path)]
        except StorageError as e:
            raise HTTPException(status_code=500, detail=str(e))

    files = [
        FileEntry(path=f["path"], sha256=f["sha256"])
        for f in manifest["files"]
        if f["path"].startswith(f"{seq_id}/")
    ]
    return SequenceOut(**entry, homographies=homographies, files=files)
