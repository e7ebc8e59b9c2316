"""Command-line driver: synth, eval, rho-sweep, report, verify, describe and serve."""

import argparse
import logging
import logging.config
import shutil
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

from patchbench import __version__
from patchbench.config import COUNT_FIELDS, RunConfig, load_run_config, settings
from patchbench.errors import ConfigError, PatchbenchError
from patchbench.services.benchmark import rho_sweep, run_benchmark, synthesize_corpus
from patchbench.services.descriptors import get_family
from patchbench.services.geometry import NOISE_PROFILES
from patchbench.services.tasks import IMAGES_PER_GROUP, Report, describe_corpus, summarize
from patchbench.store.corpus import (
    MANIFEST,
    ingest_external,
    load_corpus,
    save_corpus,
    verify_corpus,
)
from patchbench.store.descriptors import write_descriptors
from patchbench.store.results import (
    read_all_details,
    write_results,
    write_rho_sweep,
    write_summary,
)

logger = logging.getLogger("patchbench.cli")

LOGGING_INI = Path(__file__).with_name("logging.ini")
FAILED = "FAILED"
RHO_SWEEP_FILE = "rho_sweep.csv"

# flag -> RunConfig field
_RUN_FLAGS: dict[str, str] = {
    "--seed": "seed",
    "--scenes": "scenes",
    "--illum-fraction": "illum_fraction",
    "--image-size": "image_size",
    "--max-regions": "max_regions",
    "--rho": "rho",
    "--noise": "noise",
    "--desc": "descriptors",
    "--tasks": "tasks",
    "--scale": "scale",
    "--out": "out",
    "--threads": "threads",
    "--n-pos": "n_pos",
    "--n-neg": "n_neg",
    "--n-queries": "n_queries",
    "--n-distractors": "n_distractors",
    "--fit-fraction": "fit_fraction",
    "--zca-alpha": "zca_alpha",
    "--zca-clip": "zca_clip_candidates",
    "--brief-seed": "brief_seed",
    "--sweep-noise": "sweep_noise",
    "--sweep-desc": "sweep_descriptor",
    "--rhos": "rhos",
    "--sweep-image-size": "sweep_image_size",
}


def configure_logging(level: str | None = None) -> None:
    logging.config.fileConfig(LOGGING_INI, disable_existing_loggers=False)
    if level:
        logging.getLogger().setLevel(level.upper())
        logging.getLogger("patchbench").setLevel(level.upper())


def _default_text(field: str) -> str:
    default = RunConfig.model_fields[field].default
    if default is None:
        return "from --scale" if field in COUNT_FIELDS else "stored images"
    if isinstance(default, list):
        return ",".join(str(v) for v in default)
    return str(default)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat key=value config file")
    for flag, field in _RUN_FLAGS.items():
        parser.add_argument(
            flag, dest=field, default=None, help=f"{field} (default: {_default_text(field)})"
        )
    parser.add_argument(
        "--paper-scale",
        dest="scale",
        action="store_const",
        const="paper",
        help="full-size counts (same as --scale paper)",
    )


def _run_config(args: argparse.Namespace) -> RunConfig:
    overrides = {field: getattr(args, field, None) for field in _RUN_FLAGS.values()}
    return load_run_config(args.config, **overrides)


def _clear_failed(out: Path) -> None:
    (out / FAILED).unlink(missing_ok=True)


def _mark_failed(out: Path, error: Exception) -> None:
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / FAILED).write_text(f"{type(error).__name__}: {error}\n", encoding="utf-8")
    except OSError:
        logger.exception("could not write the %s sentinel in %s", FAILED, out)


def print_summary(report: Report) -> None:
    width = max((len(r.descriptor) for r in report.summary), default=10)
    print(f"{'descriptor':<{width}}  {'task':<12}  mAP")
    for row in report.summary:
        print(f"{row.descriptor:<{width}}  {row.task:<12}  {row.map * 100:6.2f}")
    if report.throughput:
        print(f"{'descriptor':<{width}}  thousand patches/s")
        for name, rate in report.throughput.items():
            print(f"{name:<{width}}  {rate:.1f}")


# commands ----------------------------------------------------------------------------------


def cmd_synth(config: RunConfig) -> None:
    corpus, sequences = synthesize_corpus(config)
    if (config.corpus_dir / MANIFEST).is_file():
        shutil.rmtree(config.corpus_dir)
    save_corpus(corpus, config.corpus_dir, sequences, config.echo())


def cmd_eval(config: RunConfig, external: Path | None = None) -> Report:
    corpus = (
        ingest_external(external, config.fit_fraction)
        if external is not None
        else load_corpus(config.corpus_dir)
    )
    report = run_benchmark(corpus, config)
    write_results(report, config.results_dir)
    return report


def cmd_rho_sweep(config: RunConfig) -> list[tuple[float, list[float]]]:
    table = rho_sweep(config.corpus_dir, config)
    write_rho_sweep(config.results_dir / RHO_SWEEP_FILE, table)
    return table


def cmd_report(results_dir: Path) -> Report:
    """Recompute summary.csv and plot_data.csv from the detail files."""
    details = read_all_details(results_dir)
    seen = {r.variant for records in details.values() for r in records}
    variants = [v for v in NOISE_PROFILES if v in seen]
    report = summarize(details, variants)
    write_summary(results_dir, report)
    return report


def _run(out: Path, failure_code: int, body: Callable[[], Any]) -> int:
    """Run a command that writes under `out`; failures leave a FAILED sentinel there."""
    try:
        body()
    except PatchbenchError as e:
        logger.error("%s", e)
        _mark_failed(out, e)
        return e.exit_code or failure_code
    except Exception as e:
        _mark_failed(out, e)
        raise
    _clear_failed(out)
    return 0


def _synth(args: argparse.Namespace) -> int:
    config = _run_config(args)
    return _run(config.out, 2, lambda: cmd_synth(config))


def _eval(args: argparse.Namespace) -> int:
    config = _run_config(args)
    return _run(config.out, 5, lambda: print_summary(cmd_eval(config, args.external)))


def _rho_sweep(args: argparse.Namespace) -> int:
    config = _run_config(args)

    def body() -> None:
        table = cmd_rho_sweep(config)
        print("rho    " + "  ".join(f"1|{k + 2}" for k in range(len(table[0][1]))))
        for rho, values in table:
            print(f"{rho:<6g} " + "  ".join(f"{v:.3f}" for v in values))

    return _run(config.out, 5, body)


def _report(args: argparse.Namespace) -> int:
    return _run(args.out, 3, lambda: print_summary(cmd_report(args.out / "results")))


def _verify(args: argparse.Namespace) -> int:
    corpus_dir = args.corpus or args.out / "corpus"
    problems = verify_corpus(corpus_dir)
    for problem in problems:
        print(f"FAIL: {problem}")
    if problems:
        return 3
    print(f"PASS: all files in {corpus_dir} verified")
    return 0


def cmd_describe(config: RunConfig, family_name: str, variant: str, output: Path) -> None:
    corpus = load_corpus(config.corpus_dir)
    family = get_family(family_name, config.brief_seed)
    descriptors = describe_corpus(corpus, family)
    if variant not in descriptors.blocks:
        raise ConfigError(f"corpus has no {variant!r} patches")
    ids = [
        f"{s.seq_id}:{image}:{int(rid)}"
        for s in corpus.sequences
        for image in range(IMAGES_PER_GROUP)
        for rid in s.region_ids
    ]
    write_descriptors(output, family.name, ids, descriptors.blocks[variant])
    logger.info("wrote %d %s descriptors to %s", len(ids), family.name, output)


def _describe(args: argparse.Namespace) -> int:
    config = _run_config(args)
    return _run(
        config.out, 3, lambda: cmd_describe(config, args.family, args.variant, args.output)
    )


def _serve(args: argparse.Namespace) -> int:
    import uvicorn

    if args.out is not None:
        settings.RESULTS_DIR = args.out / "results"
        settings.CORPUS_DIR = args.out / "corpus"
    uvicorn.run("patchbench.main:app", host=args.host, port=args.port, log_config=None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level", default=None, help="root log level (default: from logging.ini)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a seeded corpus")
    _add_run_flags(synth)
    synth.set_defaults(handler=_synth)

    evaluate = sub.add_parser("eval", help="evaluate descriptors on a corpus")
    _add_run_flags(evaluate)
    evaluate.add_argument(
        "--external", type=Path, default=None, help="evaluate strip directories without a manifest"
    )
    evaluate.set_defaults(handler=_eval)

    sweep = sub.add_parser("rho-sweep", help="matching mAP per measurement-region scale")
    _add_run_flags(sweep)
    sweep.set_defaults(handler=_rho_sweep)

    report = sub.add_parser("report", help="recompute the summary from detail files")
    report.add_argument("--out", type=Path, default=Path("out"), help="output root (default: out)")
    report.set_defaults(handler=_report)

    verify = sub.add_parser("verify", help="check corpus files against manifest digests")
    verify.add_argument("--out", type=Path, default=Path("out"), help="output root (default: out)")
    verify.add_argument("--corpus", type=Path, default=None, help="corpus directory to check")
    verify.set_defaults(handler=_verify)

    describe = sub.add_parser("describe", help="export descriptors of a stored corpus")
    _add_run_flags(describe)
    describe.add_argument("--family", required=True, help="descriptor family")
    describe.add_argument("--variant", default="easy", help="noise variant (default: easy)")
    describe.add_argument("--output", type=Path, required=True, help=".csv, or raw block otherwise")
    describe.set_defaults(handler=_describe)

    serve = sub.add_parser("serve", help="serve results and corpus metadata over HTTP")
    serve.add_argument("--out", type=Path, default=None, help="output root to serve")
    serve.add_argument("--host", default="127.0.0.1", help="(default: 127.0.0.1)")
    serve.add_argument("--port", type=int, default=8000, help="(default: 8000)")
    serve.set_defaults(handler=_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except PatchbenchError as e:
        logger.error("%s", e)
        return e.exit_code or 1


if __name__ == "__main__":
    sys.exit(main())
