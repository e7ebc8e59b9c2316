"""Result CSVs: per-descriptor detail files, the summary table and plot data."""

import csv
import io
import logging
from pathlib import Path

from patchbench.errors import CorpusFormatError, MissingResultsError, StorageError
from patchbench.services.tasks import ApRecord, PlotPoint, Report, SummaryRow

logger = logging.getLogger(__name__)

DETAIL_HEADER = ("task", "variant", "subvariant", "id", "ap")
SUMMARY_HEADER = ("descriptor", "task", "map")
PLOT_HEADER = ("descriptor", "task", "variant", "subvariant", "map")
SUMMARY_FILE = "summary.csv"
PLOT_FILE = "plot_data.csv"


def fmt(value: float) -> str:
    return f"{value:.6g}"


def _csv_bytes(header: tuple[str, ...], rows: list[list[str]]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def _write(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def detail_path(results_dir: Path, descriptor: str, task: str) -> Path:
    return Path(results_dir) / descriptor / f"{task}.csv"


def write_detail(results_dir: Path, descriptor: str, task: str, records: list[ApRecord]) -> Path:
    path = detail_path(results_dir, descriptor, task)
    rows = [[str(r.task), r.variant, str(r.subvariant), r.id, fmt(r.ap)] for r in records]
    _write(path, _csv_bytes(DETAIL_HEADER, rows))
    return path


def write_summary(results_dir: Path, report: Report) -> None:
    results_dir = Path(results_dir)
    summary = [[r.descriptor, str(r.task), fmt(r.map)] for r in report.summary]
    plot = [
        [p.descriptor, str(p.task), p.variant, str(p.subvariant), fmt(p.map)] for p in report.plot
    ]
    _write(results_dir / SUMMARY_FILE, _csv_bytes(SUMMARY_HEADER, summary))
    _write(results_dir / PLOT_FILE, _csv_bytes(PLOT_HEADER, plot))


def write_results(report: Report, results_dir: Path) -> None:
    """Detail files for every descriptor and task, then summary.csv and plot_data.csv."""
    for descriptor, records in report.records.items():
        tasks = dict.fromkeys(str(r.task) for r in records)
        for task in tasks:
            write_detail(results_dir, descriptor, task, [r for r in records if r.task == task])
    write_summary(results_dir, report)
    logger.info("results written to %s", results_dir)


def _read_rows(path: Path, header: tuple[str, ...]) -> list[dict[str, str]]:
    if not path.is_file():
        raise MissingResultsError(f"{path} not found")
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != header:
                raise CorpusFormatError(f"{path}: unexpected header {reader.fieldnames}")
            return list(reader)
    except OSError as e:
        raise StorageError(f"cannot read {path}: {e}") from e


def read_detail(path: Path) -> list[ApRecord]:
    rows = _read_rows(Path(path), DETAIL_HEADER)
    try:
        return [
            ApRecord(r["task"], r["variant"], r["subvariant"], r["id"], float(r["ap"]))
            for r in rows
        ]
    except ValueError as e:
        raise CorpusFormatError(f"{path}: {e}") from e


def read_all_details(results_dir: Path) -> dict[str, list[ApRecord]]:
    """Detail records of every descriptor directory, in sorted descriptor and task order."""
    results_dir = Path(results_dir)
    if not results_dir.is_dir():
        raise MissingResultsError(f"no results at {results_dir}")
    out: dict[str, list[ApRecord]] = {}
    for desc_dir in sorted(p for p in results_dir.iterdir() if p.is_dir()):
        records = []
        for path in sorted(desc_dir.glob("*.csv")):
            records.extend(read_detail(path))
        if records:
            out[desc_dir.name] = records
    return out


def read_summary(results_dir: Path) -> list[SummaryRow]:
    rows = _read_rows(Path(results_dir) / SUMMARY_FILE, SUMMARY_HEADER)
    return [SummaryRow(r["descriptor"], r["task"], float(r["map"])) for r in rows]


def read_plot_data(results_dir: Path) -> list[PlotPoint]:
    rows = _read_rows(Path(results_dir) / PLOT_FILE, PLOT_HEADER)
    return [
        PlotPoint(r["descriptor"], r["task"], r["variant"], r["subvariant"], float(r["map"]))
        for r in rows
    ]


def write_rho_sweep(path: Path, table: list[tuple[float, list[float]]]) -> None:
    """One row per rho, one matching-mAP column per target image (1|2 .. 1|6)."""
    n_targets = len(table[0][1]) if table else 0
    header = ("rho", *(f"1|{k + 2}" for k in range(n_targets)))
    rows = [[fmt(rho), *(fmt(v) for v in values)] for rho, values in table]
    _write(Path(path), _csv_bytes(header, rows))
