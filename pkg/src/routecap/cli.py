"""Command line: ``routecap {gen-data,train,eval,interpret-local,interpret-global}``.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .encoders import FEATURES
from .exceptions import (CheckpointError, ContractError, DimensionError, NumericalError,
                         ValidationError)
from .interpretation import (GROUP_BY, QUANTITIES, GlobalStats, build_report, local_contributions,
                             render_csv, render_text, write_local_jsonl)
from .metrics import F1_AVERAGES
from .model import MODES, TrainConfig
from .routing import DEFAULT_ITERATIONS
from .training import decide, evaluate, forward_chunks, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
EMOTIONS = ("happy", "sad", "angry", "fear", "disgust", "surprise")

logger = logging.getLogger("routecap")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def default_seed() -> int:
    raw = os.environ.get("ROUTECAP_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"ROUTECAP_SEED must be an integer, got {raw!r}") from None


def _print_config(command: str, config: dict) -> None:
    print(json.dumps({"command": command, "config": config}, sort_keys=True), file=sys.stderr)


def _load(path: str) -> tuple[list[data_mod.Sample], data_mod.DatasetManifest]:
    path = Path(path)
    manifest = data_mod.read_manifest(data_mod.manifest_path_for(path))
    return data_mod.load_dataset(path, manifest), manifest


def label_names(manifest: data_mod.DatasetManifest) -> list[str]:
    if manifest.label_kind == "sentiment":
        return [str(s) for s in range(-3, 4)]
    if manifest.label_kind == "emotion" and manifest.n_labels == len(EMOTIONS):
        return list(EMOTIONS)
    return [str(j) for j in range(manifest.n_labels)]


def _check_against(ckpt, manifest) -> None:
    c = ckpt.config
    if c.dims != manifest.dims or c.n_labels != manifest.n_labels or c.task != manifest.task:
        raise DimensionError(
            f"checkpoint expects task={c.task} J={c.n_labels} dims={c.dims}, "
            f"dataset has task={manifest.task} J={manifest.n_labels} dims={manifest.dims}")


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.sigma < 0:
        raise UsageError(f"--sigma must be >= 0, got {args.sigma}")
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    try:
        data_mod.parse_plant(args.plant)
    except ValidationError as exc:
        raise UsageError(str(exc)) from None
    spec = data_mod.SyntheticSpec(
        plant=args.plant, n=args.n, sigma=args.sigma, seed=args.seed,
        lengths={m: args.length for m in "avt"}, dims={m: args.dim for m in "avt"},
    )
    _print_config("gen-data", {"plant": spec.plant, "n": spec.n, "sigma": spec.sigma, "seed": spec.seed,
                               "length": args.length, "dim": args.dim, "out": args.out})
    samples, manifest, truth = data_mod.gen_synthetic(spec)
    data_mod.write_dataset(samples, args.out)
    data_mod.write_manifest(manifest, data_mod.manifest_path_for(args.out))
    print(json.dumps({"written": len(samples), "truth": truth}, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    iters = args.iters
    if args.mode == "routing-star":
        if iters is not None and iters != 1:
            raise UsageError(f"--mode routing-star runs exactly one routing iteration; got --iters {iters}")
        iters = 1
    elif iters is None:
        iters = DEFAULT_ITERATIONS
    if iters < 1:
        raise UsageError(f"--iters must be >= 1, got {iters}")
    features = tuple(args.features.split(",")) if args.features else FEATURES
    unknown = [f for f in features if f not in FEATURES]
    if unknown:
        raise UsageError(f"--features has unknown entries {unknown}; choose from {','.join(FEATURES)}")
    samples, manifest = _load(args.data)
    try:
        config = TrainConfig(
            n_labels=manifest.n_labels, dims=manifest.dims, task=manifest.task, mode=args.mode, iterations=iters,
            d_f=args.d_f, d_c=args.d_c, learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
            dropout=args.dropout, seed=args.seed, features=features,
        )
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    resolved = config.to_dict()
    _print_config("train", {**resolved, "iters": iters, "data": args.data, "ckpt_out": args.ckpt_out})
    ckpt, log = train(config, data_mod.pool_samples(samples, manifest.dims), data_mod.targets(samples, manifest),
                      on_epoch=lambda row: print(json.dumps(row), file=sys.stderr))
    save_checkpoint(ckpt, args.ckpt_out)
    if args.log_out:
        Path(args.log_out).write_text(log.to_csv())
    final = log.rows[-1] if log.rows else {}
    print(json.dumps({"checkpoint": args.ckpt_out, "epochs": config.epochs, "final": final}, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    samples, manifest = _load(args.data)
    _check_against(ckpt, manifest)
    _print_config("eval", {**ckpt.config.to_dict(), "ckpt": args.ckpt, "data": args.data,
                           "f1_average": args.f1_average})
    result = evaluate(ckpt, data_mod.pool_samples(samples, manifest.dims), data_mod.targets(samples, manifest),
                      label_kind=manifest.label_kind, f1_average=args.f1_average)
    _write(json.dumps(result.to_dict(), sort_keys=True) + "\n", args.out)
    return EXIT_OK


def cmd_interpret_global(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    samples, manifest = _load(args.data)
    _check_against(ckpt, manifest)
    if ckpt.config.mode == "gam":
        raise ContractError("interpretation needs routing coefficients; the checkpoint was trained in GAM mode")
    _print_config("interpret-global", {**ckpt.config.to_dict(), "ckpt": args.ckpt, "data": args.data,
                                       "quantity": args.quantity, "group_by": args.group_by,
                                       "format": args.format, "level": args.level})
    stats = GlobalStats(list(ckpt.config.features), ckpt.config.n_labels, args.group_by)
    evaluate(ckpt, data_mod.pool_samples(samples, manifest.dims), data_mod.targets(samples, manifest), stats=stats)
    report = build_report(stats, args.quantity, args.level, label_names(manifest))
    _write(render_csv(report) if args.format == "csv" else render_text(report), args.out)
    return EXIT_OK


def cmd_interpret_local(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    samples, manifest = _load(args.data)
    _check_against(ckpt, manifest)
    if ckpt.config.mode == "gam":
        raise ContractError("interpretation needs routing coefficients; the checkpoint was trained in GAM mode")
    by_id = {s.id: k for k, s in enumerate(samples)}
    wanted = args.ids.split(",") if args.ids else [s.id for s in samples]
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise ValidationError(f"unknown sample ids: {','.join(missing)}")
    _print_config("interpret-local", {**ckpt.config.to_dict(), "ckpt": args.ckpt, "data": args.data,
                                      "ids": wanted, "verify": args.verify})
    chosen = [samples[by_id[i]] for i in wanted]
    y = data_mod.targets(chosen, manifest)
    model = ckpt.model()
    records = []
    for sl, out in forward_chunks(model, data_mod.pool_samples(chosen, manifest.dims)):
        scores = (out.hhat.data * model.readout.o.data).sum(axis=-1)
        pred = decide(out.logits.data, model.config.task)
        for b, k in enumerate(range(sl.start, sl.stop)):
            records.append(local_contributions(
                chosen[k].id, model.config.features, out.p.data[b], out.r.data[b], scores[b],
                out.logits.data[b], predicted=pred[b].tolist(), true=y[k].tolist()))
    if args.verify:
        worst = max(rec.decomposition_gap() for rec in records)
        if worst >= 1e-6:
            raise NumericalError(f"contribution columns miss their logits by {worst:.3e}")
        print(json.dumps({"verified": len(records), "max_gap": worst}), file=sys.stderr)
    if args.out:
        with open(args.out, "w") as fh:
            write_local_jsonl(records, fh)
    else:
        write_local_jsonl(records, sys.stdout)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    seed = default_seed()
    parser = _Parser(prog="routecap", description="Multimodal routing: train, evaluate and interpret.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a planted synthetic dataset")
    g.add_argument("--plant", required=True, help="unimodal:a|v|t, bimodal:<two of a,v,t>, or trimodal")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=seed)
    g.add_argument("--sigma", type=float, default=0.1)
    g.add_argument("--length", type=int, default=8, help="frames per modality")
    g.add_argument("--dim", type=int, default=4, help="frame width per modality")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit a model and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=MODES, default="routing")
    t.add_argument("--iters", type=int, default=None, help="routing iterations (default 2; routing-star uses 1)")
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch", type=int, default=32)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--dropout", type=float, default=0.5)
    t.add_argument("--d-f", dest="d_f", type=int, default=64)
    t.add_argument("--d-c", dest="d_c", type=int, default=64)
    t.add_argument("--features", default=None, help="comma-separated subset of a,v,t,av,vt,ta,avt")
    t.add_argument("--seed", type=int, default=seed)
    t.add_argument("--ckpt-out", dest="ckpt_out", required=True)
    t.add_argument("--log-out", dest="log_out", default=None, help="write the per-epoch log as CSV")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--f1-average", dest="f1_average", choices=F1_AVERAGES, default="weighted")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_eval)

    ig = sub.add_parser("interpret-global", help="confidence intervals of mean routing quantities")
    ig.add_argument("--ckpt", required=True)
    ig.add_argument("--data", required=True)
    ig.add_argument("--quantity", choices=QUANTITIES, default="r")
    ig.add_argument("--group-by", dest="group_by", choices=GROUP_BY, default="none")
    ig.add_argument("--format", choices=("csv", "text"), default="text")
    ig.add_argument("--level", type=float, default=0.95)
    ig.add_argument("--out", default=None)
    ig.set_defaults(func=cmd_interpret_global)

    il = sub.add_parser("interpret-local", help="per-sample contribution matrices as JSON lines")
    il.add_argument("--ckpt", required=True)
    il.add_argument("--data", required=True)
    il.add_argument("--ids", default=None, help="comma-separated sample ids (default: all)")
    il.add_argument("--out", default=None)
    il.add_argument("--verify", action="store_true", help="check that contribution columns sum to the logits")
    il.set_defaults(func=cmd_interpret_local)
    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"routecap: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"routecap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"routecap {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValidationError, DimensionError, ContractError, CheckpointError, FileNotFoundError) as exc:
        print(f"routecap {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
