"""Command-line surface: dataset generation, training runs, and
bias/variance analysis sweeps.

Exit codes: 0 success, 1 usage error (bad flags or flag values),
2 runtime error (bad dataset, unwritable path, oracle overflow, ...).
All tables go to files; one JSON summary line goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .analysis import RunRecord, bias_variance_decompose
from .errors import ConfigError, GcnLabError, OracleTooLargeError
from .graphs import generate_sbm, load_dataset, save_dataset
from .model import init_params
from .sampling import SamplerConfig
from .training import TrainConfig, evaluate, parse_measure_mse, train
from .variance_reduction import SnapshotConfig

CSV_HEADER = "iter,epoch,train_loss,val_loss,grad_mse,bias_sq,variance,grad_norm,f1_val,snapshot_flag,wall_ms"
ANALYZE_HEADER = "sampler,s,mse,bias_sq,variance,stderr,method"


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this project's
    contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="gcnlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset directory")
    gen.add_argument("kind", choices=["sbm"], help="generator family")
    gen.add_argument("--nodes", type=int, required=True)
    gen.add_argument("--blocks", type=int, required=True)
    gen.add_argument("--p-in", type=float, required=True, dest="p_in")
    gen.add_argument("--p-out", type=float, required=True, dest="p_out")
    gen.add_argument("--feat-dim", type=int, required=True, dest="feat_dim")
    gen.add_argument("--noise", type=float, default=0.1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="run a training loop and write per-iteration metrics")
    tr.add_argument("--data", required=True)
    tr.add_argument("--sampler", choices=["exact", "nodewise", "fastgcn", "ladies", "subgraph"], default="exact")
    tr.add_argument("--neighbors", type=int, help="neighbors per node (nodewise only)")
    tr.add_argument("--samples-per-layer", type=int, dest="samples_per_layer", help="nodes per layer (fastgcn/ladies only)")
    tr.add_argument("--vr", choices=["none", "zeroth", "doubly"], default="none")
    tr.add_argument("--snapshot", default="full", help="full or large:<B'>")
    tr.add_argument("--snapshot-gap", type=int, default=10, dest="snapshot_gap")
    tr.add_argument("--snapshot-gap-growth", type=float, default=0.0, dest="snapshot_gap_growth")
    tr.add_argument("--alpha", type=float, default=1.1)
    tr.add_argument("--beta", type=float, default=1.1)
    tr.add_argument("--layers", type=int, default=2)
    tr.add_argument("--hidden", type=int, default=256)
    tr.add_argument("--batch-size", type=int, default=512, dest="batch_size")
    tr.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    tr.add_argument("--lr", type=float, default=0.01)
    tr.add_argument("--activation", choices=["elu", "relu", "identity"], default="elu")
    tr.add_argument("--epochs", type=int, default=1)
    tr.add_argument("--iters-per-epoch", type=int, default=0, dest="iters_per_epoch")
    tr.add_argument("--eval-every", type=int, default=1, dest="eval_every")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--measure-mse", default="off", dest="measure_mse", help="off, every:<k>, or draws:<n>")
    tr.add_argument("--out", required=True)

    an = sub.add_parser("analyze", help="bias/variance decomposition sweep")
    an.add_argument("--data", required=True)
    an.add_argument("--sweep", required=True, help="comma-separated entries like exact,nodewise:2,ladies:4")
    an.add_argument("--method", default="enumerate", help="enumerate or monte-carlo:<n>")
    an.add_argument("--batch-size", default="full", dest="batch_size", help="loss batch size or 'full'")
    an.add_argument("--batch-law", choices=["fixed", "uniform"], default="fixed", dest="batch_law")
    an.add_argument("--layers", type=int, default=1)
    an.add_argument("--hidden", type=int, default=8)
    an.add_argument("--activation", choices=["elu", "relu", "identity"], default="elu")
    an.add_argument("--seed", type=int, default=0)
    an.add_argument("--out", required=True)
    return parser


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def record_to_row(record: RunRecord) -> str:
    return ",".join(
        _format(v)
        for v in (
            record.iteration,
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.grad_mse,
            record.bias_sq,
            record.variance,
            record.grad_norm,
            record.f1_val,
            record.snapshot_flag,
            record.wall_ms,
        )
    )


def cmd_generate(args) -> int:
    if not (0.0 <= args.p_in <= 1.0):
        raise ConfigError(f"--p-in must be within [0, 1], got {args.p_in}")
    if not (0.0 <= args.p_out <= 1.0):
        raise ConfigError(f"--p-out must be within [0, 1], got {args.p_out}")
    dataset = generate_sbm(
        args.nodes, args.blocks, args.p_in, args.p_out, args.feat_dim, args.noise, args.seed
    )
    save_dataset(dataset, args.out)
    n_edges = (dataset.laplacian.nnz - dataset.num_nodes) // 2  # self-loop diagonal excluded
    print(json.dumps({
        "dataset": "sbm",
        "path": str(Path(args.out)),
        "nodes": dataset.num_nodes,
        "edges": n_edges,
        "feat_dim": dataset.num_features,
        "classes": dataset.num_classes,
        "seed": args.seed,
    }))
    return 0


def _sampler_config(strategy, neighbors, samples_per_layer, batch_size, seed) -> SamplerConfig:
    if strategy == "nodewise":
        if neighbors is None:
            raise ConfigError("--sampler nodewise requires --neighbors")
        if samples_per_layer is not None:
            raise ConfigError("--samples-per-layer is not valid with --sampler nodewise")
        return SamplerConfig("nodewise", neighbors_per_node=neighbors, seed=seed)
    if strategy in ("fastgcn", "ladies"):
        if samples_per_layer is None:
            raise ConfigError(f"--sampler {strategy} requires --samples-per-layer")
        if neighbors is not None:
            raise ConfigError(f"--neighbors is not valid with --sampler {strategy}")
        return SamplerConfig(strategy, samples_per_layer=samples_per_layer, seed=seed)
    if neighbors is not None or samples_per_layer is not None:
        raise ConfigError(f"--sampler {strategy} takes neither --neighbors nor --samples-per-layer")
    if strategy == "subgraph":
        # the subgraph node-set size doubles as the mini-batch size
        return SamplerConfig("subgraph", samples_per_layer=batch_size, seed=seed)
    return SamplerConfig("exact", seed=seed)


def _snapshot_config(args) -> SnapshotConfig:
    spec = args.snapshot
    if spec == "full":
        mode, size = "full_batch", 0
    elif spec.startswith("large:"):
        try:
            size = int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"--snapshot large:<B'> needs an integer size, got {spec!r}") from None
        mode = "large_batch"
    else:
        raise ConfigError(f"--snapshot must be 'full' or 'large:<B'>', got {spec!r}")
    return SnapshotConfig(
        mode=mode,
        size=size,
        gap=args.snapshot_gap,
        alpha=args.alpha,
        beta=args.beta,
        gap_growth=args.snapshot_gap_growth,
    )


def cmd_train(args) -> int:
    parse_measure_mse(args.measure_mse)  # fail on bad flag values before any work
    if args.layers < 1:
        raise ConfigError(f"--layers must be >= 1, got {args.layers}")
    if args.hidden < 1:
        raise ConfigError(f"--hidden must be >= 1, got {args.hidden}")
    sampler = _sampler_config(args.sampler, args.neighbors, args.samples_per_layer, args.batch_size, args.seed)
    snapshot = _snapshot_config(args)
    if args.vr == "none" and (snapshot.mode != "full_batch"):
        raise ConfigError("--snapshot large:<B'> requires --vr zeroth or doubly")
    config = TrainConfig(
        sampler=sampler,
        vr_mode=args.vr,
        snapshot=snapshot,
        batch_size=args.batch_size,
        epochs=args.epochs,
        iters_per_epoch=args.iters_per_epoch,
        seed=args.seed,
        eval_every=args.eval_every,
        optimizer=args.optimizer,
        lr=args.lr,
        measure_mse=args.measure_mse,
    ).validate()

    graph = load_dataset(args.data)
    loss = "sigmoid_bce" if graph.multilabel else "softmax_ce"
    dims = [graph.num_features] + [args.hidden] * (args.layers - 1) + [graph.num_classes]
    params = init_params(dims, args.activation, loss, seed=args.seed)

    records = []
    params = train(graph, params, config, sink=records.append)

    with open(args.out, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for record in records:
            fh.write(record_to_row(record) + "\n")

    summary = {
        "iterations": len(records),
        "snapshots": int(sum(r.snapshot_flag for r in records)),
        "final_train_loss": records[-1].train_loss if records else None,
        "out": str(Path(args.out)),
    }
    for split in ("val", "test"):
        if len(graph.mask(split)):
            split_loss, split_score = evaluate(graph, params, split)
            summary[f"{split}_loss"] = split_loss
            summary[f"{split}_score"] = split_score
    print(json.dumps(summary))
    return 0


def _parse_sweep(spec: str, batch_size, seed):
    entries = []
    for raw in spec.split(","):
        raw = raw.strip()
        if not raw:
            continue
        if ":" in raw:
            name, count = raw.split(":", 1)
            try:
                count = int(count)
            except ValueError:
                raise ConfigError(f"--sweep entry {raw!r}: count must be an integer") from None
        else:
            name, count = raw, 0
        if name == "exact":
            if count:
                raise ConfigError(f"--sweep entry {raw!r}: exact takes no count")
            entries.append(("exact", 0, SamplerConfig("exact", seed=seed)))
        elif name == "nodewise":
            entries.append((name, count, SamplerConfig("nodewise", neighbors_per_node=count, seed=seed)))
        elif name in ("fastgcn", "ladies"):
            entries.append((name, count, SamplerConfig(name, samples_per_layer=count, seed=seed)))
        elif name == "subgraph":
            entries.append((name, count, SamplerConfig("subgraph", samples_per_layer=count, seed=seed)))
        else:
            raise ConfigError(f"--sweep entry {raw!r}: unknown sampler {name!r}")
    if not entries:
        raise ConfigError("--sweep is empty")
    return entries


def cmd_analyze(args) -> int:
    if args.method == "enumerate":
        method, n_draws = "enumerate", 0
    elif args.method.startswith("monte-carlo:"):
        try:
            n_draws = int(args.method.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"--method monte-carlo:<n> needs an integer, got {args.method!r}") from None
        method = "monte_carlo"
    else:
        raise ConfigError(f"--method must be 'enumerate' or 'monte-carlo:<n>', got {args.method!r}")
    if method == "enumerate" and args.batch_law == "uniform":
        raise ConfigError("--batch-law uniform requires --method monte-carlo:<n>")

    graph = load_dataset(args.data)
    loss = "sigmoid_bce" if graph.multilabel else "softmax_ce"
    dims = [graph.num_features] + [args.hidden] * (args.layers - 1) + [graph.num_classes]
    params = init_params(dims, args.activation, loss, seed=args.seed)

    if args.batch_size == "full":
        batch = graph.train_nodes
    else:
        try:
            size = int(args.batch_size)
        except ValueError:
            raise ConfigError(f"--batch-size must be an integer or 'full', got {args.batch_size!r}") from None
        if args.batch_law == "uniform":
            batch = size
        else:
            rng = np.random.default_rng(np.random.SeedSequence(entropy=args.seed, spawn_key=(0,)))
            batch = np.sort(rng.choice(graph.train_nodes, size=min(size, len(graph.train_nodes)), replace=False))
    batch_law = ("uniform", batch) if args.batch_law == "uniform" else ("fixed", batch)

    rows = []
    for entry_idx, (name, count, sampler) in enumerate(_parse_sweep(args.sweep, args.batch_size, args.seed)):
        try:
            dec = bias_variance_decompose(
                graph, params, sampler, batch_law,
                n_draws=n_draws,
                rng=np.random.default_rng(np.random.SeedSequence(entropy=args.seed, spawn_key=(1, entry_idx))),
                method=method,
            )
        except OracleTooLargeError as exc:
            raise OracleTooLargeError(
                f"{name}:{count}: {exc}; rerun with --method monte-carlo:<n>"
            ) from None
        rows.append(f"{name},{count},{repr(dec.mse)},{repr(dec.bias_sq)},{repr(dec.variance)},{repr(dec.stderr)},{args.method}")

    with open(args.out, "w") as fh:
        fh.write(ANALYZE_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")
    print(json.dumps({"rows": len(rows), "method": args.method, "out": str(Path(args.out))}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "train":
            return cmd_train(args)
        return cmd_analyze(args)
    except ConfigError as exc:
        print(f"gcnlab: error: {exc}", file=sys.stderr)
        return 1
    except GcnLabError as exc:
        print(f"gcnlab: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gcnlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
