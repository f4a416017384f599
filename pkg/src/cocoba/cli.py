"""Command-line entry points: the benchmark harness and the annotation server."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from cocoba.corpus import load_dataset, write_dataset
from cocoba.embeddings import load_snapshot, write_snapshot
from cocoba.engine import EngineConfig
from cocoba.harness import (
    ExperimentSpec,
    SyntheticSpec,
    make_synthetic_dataset,
    run_experiment,
    summarize,
    write_curve_csv,
)
from cocoba.learner import LearnerConfig


def _parse_seeds(raw: str) -> tuple[int, ...]:
    # "5" means seeds 0..4; "0,3,7" means exactly those seeds.
    if "," in raw:
        return tuple(int(s) for s in raw.split(",") if s.strip())
    return tuple(range(int(raw)))


def _add_run_parser(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="run a strategy x seed benchmark matrix")
    p.add_argument("--dataset", required=True, help="postings JSONL file")
    p.add_argument("--meta", required=True, help="sidecar header JSON file")
    p.add_argument("--snapshot", required=True,
                   help="snapshot path(s), comma-separated; extras rotate in at --swap-every")
    p.add_argument("--strategy", default="cocoba,uncertainty,random",
                   help="comma-separated strategy list; first is the primary for t-tests")
    p.add_argument("--seeds", default="5", help="seed count, or comma-separated seed list")
    p.add_argument("--cold-start", type=int, default=50)
    p.add_argument("--budget-frac", type=float, default=1.0)
    p.add_argument("--eval-every", type=int, default=10)
    p.add_argument("--swap-every", type=int, default=350)
    p.add_argument("--n-estimators", type=int, default=15)
    p.add_argument("--subsample-ratio", type=float, default=0.6)
    p.add_argument("--bandwidth-doc", type=float, default=None,
                   help="document-view kernel bandwidth (default: mean pairwise distance)")
    p.add_argument("--bandwidth-word", type=float, default=None)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--log-queries", action="store_true",
                   help="also write per-cell queries.log")
    p.add_argument("--out", required=True, help="output directory")


def _add_synth_parser(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("synth", help="generate a synthetic dataset + snapshot")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--pos-rate", type=float, default=0.18)
    p.add_argument("--contexts", type=int, default=8)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--dims", default="16,16", help="doc,word vector dims")
    p.add_argument("--train-frac", type=float, default=2 / 3)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--name", default="synthetic")
    p.add_argument("--out", required=True, help="output directory")


def cmd_run(args: argparse.Namespace) -> int:
    spec = ExperimentSpec(
        dataset_path=args.dataset,
        meta_path=args.meta,
        snapshot_paths=tuple(s.strip() for s in args.snapshot.split(",") if s.strip()),
        strategies=tuple(s.strip() for s in args.strategy.split(",") if s.strip()),
        seeds=_parse_seeds(args.seeds),
        n_seed_labeled=args.cold_start,
        eval_every=args.eval_every,
        swap_every=args.swap_every,
        budget_frac=args.budget_frac,
        n_estimators=args.n_estimators,
        subsample_ratio=args.subsample_ratio,
        bandwidth_doc=args.bandwidth_doc,
        bandwidth_word=args.bandwidth_word,
        learner=LearnerConfig(learning_rate=args.learning_rate, epochs=args.epochs),
    )
    result = run_experiment(spec, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for (name, seed), records in result.curves.items():
        cell = out / f"{name}-seed{seed}"
        cell.mkdir(parents=True, exist_ok=True)
        write_curve_csv(records, cell / "curve.csv")
        if args.log_queries:
            with open(cell / "queries.log", "w", encoding="utf-8") as fh:
                for r in records:
                    fh.write(f"{r.iteration}\t{r.queried_id}\n")
    table = summarize(result)
    (out / "summary.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(result.curves)} curves and summary.json under {out}")
    for name in spec.strategies:
        means = table["strategies"][name]["mean_f1"]
        cells = "  ".join(f"{frac}:{v:.3f}" for frac, v in means.items())
        print(f"  {name:12s} {cells}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    dims = tuple(int(d) for d in args.dims.split(","))
    if len(dims) != 2:
        raise SystemExit("--dims must look like '16,16'")
    spec = SyntheticSpec(
        n=args.n,
        dims=dims,
        contexts=args.contexts,
        noise=args.noise,
        pos_rate=args.pos_rate,
        train_frac=args.train_frac,
        seed=args.seed,
        name=args.name,
    )
    dataset, snapshot = make_synthetic_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(dataset, out / f"{args.name}.jsonl", out / f"{args.name}.meta.json")
    write_snapshot(snapshot, out / f"{args.name}.cvec")
    n_pos = sum(1 for p in dataset.postings if p.gold_label == 1)
    print(f"wrote {args.name}.jsonl/.meta.json/.cvec under {out} "
          f"({args.n} postings, {n_pos / args.n:.1%} positive)")
    return 0


def bench_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="al-bench",
                                     description="active-learning benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_parser(sub)
    _add_synth_parser(sub)
    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    return cmd_synth(args)


def serve_main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="al-serve",
                                     description="live human-annotation service")
    parser.add_argument("--dataset", required=True)
    parser.add_argument("--meta", required=True)
    parser.add_argument("--snapshot", required=True)
    parser.add_argument("--strategy", default="cocoba")
    parser.add_argument("--cold-start", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--eval-every", type=int, default=1)
    parser.add_argument("--n-estimators", type=int, default=15)
    parser.add_argument("--bandwidth-doc", type=float, default=None)
    parser.add_argument("--bandwidth-word", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=200)
    parser.add_argument("--learning-rate", type=float, default=0.1)
    parser.add_argument("--state-dir", default="al-state")
    parser.add_argument("--ui-dir", default=None, help="serve a built UI from this directory")
    parser.add_argument("--host", default=os.environ.get("AL_BIND", "127.0.0.1"))
    parser.add_argument("--port", type=int, default=int(os.environ.get("AL_PORT", "8080")))
    args = parser.parse_args(argv)

    from cocoba.density import auto_bandwidth
    from cocoba.service import create_app

    dataset = load_dataset(args.dataset, args.meta)
    snapshot = load_snapshot(args.snapshot)
    if args.bandwidth_doc is None or args.bandwidth_word is None:
        ids = sorted(snapshot.vectors)
        doc_mat, word_mat = snapshot.stack(ids)
        if args.bandwidth_doc is None:
            args.bandwidth_doc = auto_bandwidth(doc_mat)
        if args.bandwidth_word is None:
            args.bandwidth_word = auto_bandwidth(word_mat)
    config = EngineConfig(
        n_estimators=args.n_estimators,
        bandwidth_doc=args.bandwidth_doc,
        bandwidth_word=args.bandwidth_word,
        strategy=args.strategy,
        rng_seed=args.seed,
        learner=LearnerConfig(learning_rate=args.learning_rate, epochs=args.epochs),
    )
    app = create_app(dataset, snapshot, config, state_dir=args.state_dir,
                     n_seed=args.cold_start, eval_every=args.eval_every,
                     ui_dir=args.ui_dir)
    import uvicorn

    print(f"serving on http://{args.host}:{args.port} "
          f"(strategy={args.strategy}, state={args.state_dir})", file=sys.stderr)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0
