from pathlib import Path

from fastapi import APIRouter, Depends, HTTPException

from patchbench.config import settings
from patchbench.errors import CorpusFormatError, MissingResultsError
from patchbench.schemas import (
    ApRecordOut,
    DetailOut,
    PlotDataOut,
    PlotPointOut,
    SummaryOut,
    SummaryRowOut,
)
from patchbench.services.tasks import TASKS
from patchbench.store.results import detail_path, read_detail, read_plot_data, read_summary

router = APIRouter(prefix="/results", tags=["results"])


def get_results_dir() -> Path:
    return settings.RESULTS_DIR


@router.get("/summary", response_model=SummaryOut)
def get_summary(results_dir: Path = Depends(get_results_dir)):
    try:
        rows = read_summary(results_dir)
    except MissingResultsError:
        raise HTTPException(status_code=404, detail="No summary; run `patchbench eval` first")
    except CorpusFormatError as e:
        raise HTTPException(status_code=500, detail=str(e))
    return SummaryOut(
        rows=[SummaryRowOut(descriptor=r.descriptor, task=r.task, map=r.map) for r in rows]
    )


@router.get("/plot-data", response_model=PlotDataOut)
def get_plot_data(results_dir: Path = Depends(get_results_dir)):
    try:
        points = read_plot_data(results_dir)
    except MissingResultsError:
        raise HTTPException(status_code=404, detail="No plot data; run `patchbench eval` first")
    except CorpusFormatError as e:
        raise HTTPException(status_code=500, detail=str(e))
    return PlotDataOut(
        points=[
            PlotPointOut(
                descriptor=p.descriptor,
                task=p.task,
                variant=p.variant,
                subvariant=p.subvariant,
                map=p.map,
            )
            for p in points
        ]
    )


@router.get("/{descriptor}/{task}", response_model=DetailOut)
def get_detail(descriptor: str, task: str, results_dir: Path = Depends(get_results_dir)):
    if task not in {str(t) for t in TASKS}:
        raise HTTPException(status_code=404, detail=f"Unknown task {task!r}")
    path = detail_path(results_dir, descriptor, task)
    # descriptor comes from the URL; keep lookups inside the results directory
    if path.resolve().parent.parent != Path(results_dir).resolve():
        raise HTTPException(status_code=404, detail="Results not found")
    try:
        records = read_detail(path)
    except MissingResultsError:
        raise HTTPException(status_code=404, detail="Results not found")
    except CorpusFormatError as e:
        raise HTTPException(status_code=500, detail=str(e))
    return DetailOut(
        descriptor=descriptor,
        task=task,
        count=len(records),
        records=[
            ApRecordOut(task=r.task, variant=r.variant, subvariant=r.subvariant, id=r.id, ap=r.ap)
            for r in records
        ],
    )
