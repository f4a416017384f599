#!/usr/bin/env python3
"""Spin up the annotation service on a small synthetic pool.

Generates a 200-posting corpus under a work directory, then launches
al-serve against it. Point a browser at /ui once the frontend is built
(see frontend/README notes in the top-level README).
"""

import argparse
import tempfile
from pathlib import Path

from cocoba.cli import serve_main
from cocoba.corpus import write_dataset
from cocoba.embeddings import write_snapshot
from cocoba.harness import SyntheticSpec, make_synthetic_dataset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--noise", type=float, default=0.9)
    parser.add_argument("--port", type=int, default=8080)
    parser.add_argument("--workdir", default=None)
    parser.add_argument("--ui-dir", default=None)
    args = parser.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="al-demo-"))
    workdir.mkdir(parents=True, exist_ok=True)
    dataset, snapshot = make_synthetic_dataset(
        SyntheticSpec(n=args.n, dims=(16, 16), contexts=4, noise=args.noise,
                      seed=7, train_frac=0.6, name="demo")
    )
    write_dataset(dataset, workdir / "demo.jsonl", workdir / "demo.meta.json")
    write_snapshot(snapshot, workdir / "demo.cvec")
    print(f"demo corpus under {workdir}")

    argv = [
        "--dataset", str(workdir / "demo.jsonl"),
        "--meta", str(workdir / "demo.meta.json"),
        "--snapshot", str(workdir / "demo.cvec"),
        "--cold-start", "20",
        "--n-estimators", "5",
        "--state-dir", str(workdir / "state"),
        "--port", str(args.port),
    ]
    if args.ui_dir:
        argv += ["--ui-dir", args.ui_dir]
    return serve_main(argv)


if __name__ == "__main__":
    raise SystemExit(main())
