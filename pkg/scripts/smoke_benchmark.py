#!/usr/bin/env python3
"""
Smoke run for the benchmark pipeline.
Synthesizes a small corpus, verifies its digests, evaluates two descriptors and prints
the manifest header and the summary table.
"""
import json
import os
import sys
from pathlib import Path

# Ensure repo root is on sys.path so `patchbench.*` imports work when running as a script
REPO_ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(REPO_ROOT))

from patchbench.cli import cmd_eval, cmd_synth, configure_logging, print_summary
from patchbench.config import load_run_config
from patchbench.store.corpus import read_manifest, verify_corpus


def main():
    out = Path(os.environ.get("SMOKE_OUT", "./tmp/smoke"))
    configure_logging("INFO")
    config = load_run_config(
        out=out,
        scenes=8,
        image_size=192,
        max_regions=60,
        descriptors="mstd,sift",
        n_pos=300,
        n_neg=1500,
        n_queries=40,
        n_distractors=300,
    )

    print("Synthesizing corpus...")
    cmd_synth(config)
    print(f"✓ Corpus written to: {config.corpus_dir}")

    problems = verify_corpus(config.corpus_dir)
    if problems:
        for problem in problems:
            print(f"FAIL: {problem}")
        raise SystemExit(3)
    print("✓ Manifest digests verified")

    manifest = read_manifest(config.corpus_dir)
    header = {k: manifest[k] for k in ("format_version", "master_seed", "rho", "variants")}
    print("\nmanifest.json header (pretty printed):")
    print(json.dumps(header, indent=2, sort_keys=True))
    print(f"  sequences: {len(manifest['sequences'])}, files: {len(manifest['files'])}")

    print("\nEvaluating...")
    report = cmd_eval(config)
    print_summary(report)

    print("\n✓ Smoke run complete!")
    print(f"  Results: {config.results_dir}")


if __name__ == "__main__":
    main()
