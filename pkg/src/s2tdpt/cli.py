"""Command-line surface: data generation, training, evaluation, profiling,
and interpretability exports.

Exit codes: 0 on success, 1 on runtime failures, 2 on usage/configuration
problems. Failures print one machine-parseable line: ``error: CATEGORY: ...``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from . import data as datamod
from . import train as trainmod
from .errors import ConfigurationError, ContractError, DatasetError, NonFiniteError
from .model import build_model, load_checkpoint, save_checkpoint
from .probe import ForwardProbe
from .profiler import profile_model, report_to_json, report_to_table


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="s2tdpt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the synthetic 4-class shape dataset")
    gen.add_argument("--seed", type=int, default=7)
    gen.add_argument("--n-per-class", type=int, default=200)
    gen.add_argument("--out", required=True, help="output directory")

    train = sub.add_parser("train", help="train a model from a config file")
    train.add_argument("--config", help="config file (defaults apply if omitted)")
    train.add_argument("--data", required=True, help="training record file")
    train.add_argument("--eval-data", help="held-out record file for per-epoch accuracy")
    train.add_argument("--out", required=True, help="output directory")
    train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--out", help="directory for report.json / confusion.csv")

    prof = sub.add_parser("profile", help="energy and memory profile of a checkpoint")
    prof.add_argument("--checkpoint", required=True)
    prof.add_argument("--data", required=True, help="record file used to measure firing rates")
    prof.add_argument("--sample-size", type=int, default=64)
    prof.add_argument("--out", help="path for the JSON report")

    sfr = sub.add_parser("export-sfr", help="export the spike-firing-rate map of one input")
    sfr.add_argument("--checkpoint", required=True)
    sfr.add_argument("--data", required=True)
    sfr.add_argument("--index", type=int, default=0, help="sample index within the data file")
    sfr.add_argument("--out", required=True, help="output path prefix (.csv and .pgm are appended)")

    insp = sub.add_parser("inspect-attention", help="dump attention scores to CSV")
    insp.add_argument("--checkpoint", required=True)
    insp.add_argument("--data", required=True)
    insp.add_argument("--index", type=int, default=0)
    insp.add_argument("--out", required=True, help="CSV path; rows ordered [layer, t, b, h, i, j]")

    return parser


def _require_file(path, what: str) -> None:
    if not os.path.exists(path):
        raise ConfigurationError(f"missing {what}: {path}")


def _load_run_config(args) -> cfgmod.RunConfig:
    if args.config:
        _require_file(args.config, "config file")
        run = cfgmod.load_config(args.config)
    else:
        run = cfgmod.RunConfig()
    return cfgmod.apply_overrides(run, args.set) if args.set else run


def _cmd_gen_data(args) -> int:
    dataset = datamod.gen_synthetic(args.seed, args.n_per_class)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "synthetic.bin")
    datamod.save_records(path, dataset, seed=args.seed)
    print(f"wrote {len(dataset)} records to {path}")
    return 0


def _cmd_train(args) -> int:
    run = _load_run_config(args)
    _require_file(args.data, "training data")
    dataset = datamod.load_records(args.data)
    if dataset.num_classes != run.model.num_classes:
        raise ConfigurationError(
            f"data has {dataset.num_classes} classes but model.num_classes={run.model.num_classes}"
        )
    eval_data = None
    if args.eval_data:
        _require_file(args.eval_data, "eval data")
        eval_data = datamod.load_records(args.eval_data).as_tuple()

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.cfg"), "w") as fh:
        fh.write(f"# seed={run.train.seed}\n")
        fh.write(cfgmod.emit_config(run))

    model = build_model(run.model, seed=run.train.seed)
    trainmod.fit(
        model,
        dataset.as_tuple(),
        run.train,
        eval_data=eval_data,
        metrics_path=os.path.join(args.out, "metrics.csv"),
        log=print,
    )
    ckpt = os.path.join(args.out, "model.ckpt")
    save_checkpoint(ckpt, model, meta={"seed": run.train.seed})
    print(f"checkpoint written to {ckpt}")
    return 0


def _cmd_eval(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.data, "eval data")
    model, _, meta = load_checkpoint(args.checkpoint)
    dataset = datamod.load_records(args.data)
    report = trainmod.evaluate(model, dataset.as_tuple())
    seed = int(meta.get("seed", 0))
    print(f"top1_accuracy: {report.top1_accuracy:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = {
            "seed": seed,
            "top1_accuracy": report.top1_accuracy,
            "per_class_accuracy": [float(v) for v in report.per_class_accuracy],
        }
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            json.dump(payload, fh, indent=2)
        trainmod.write_confusion_csv(os.path.join(args.out, "confusion.csv"), report, seed)
    return 0


def _cmd_profile(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.data, "profiling data")
    model, _, meta = load_checkpoint(args.checkpoint)
    dataset = datamod.load_records(args.data)
    sample = dataset.images[: max(1, args.sample_size)]
    report = profile_model(model, sample)
    print(report_to_table(report))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(report_to_json(report, seed=int(meta.get("seed", 0))))
            fh.write("\n")
    return 0


def _cmd_export_sfr(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.data, "data")
    model, _, meta = load_checkpoint(args.checkpoint)
    dataset = datamod.load_records(args.data)
    if not 0 <= args.index < len(dataset):
        raise ConfigurationError(f"index {args.index} outside dataset of {len(dataset)} records")
    sfr = trainmod.sfr_map(model, dataset.images[args.index])
    seed = int(meta.get("seed", 0))
    trainmod.write_sfr_csv(args.out + ".csv", sfr, seed)
    trainmod.write_sfr_pgm(args.out + ".pgm", sfr, seed)
    print(f"wrote {args.out}.csv and {args.out}.pgm")
    return 0


def _cmd_inspect_attention(args) -> int:
    _require_file(args.checkpoint, "checkpoint")
    _require_file(args.data, "data")
    model, _, meta = load_checkpoint(args.checkpoint)
    dataset = datamod.load_records(args.data)
    if not 0 <= args.index < len(dataset):
        raise ConfigurationError(f"index {args.index} outside dataset of {len(dataset)} records")
    probe = ForwardProbe(record_rates=False, record_scores=True)
    from .autodiff import no_grad

    model.eval()
    with no_grad():
        model(dataset.images[args.index : args.index + 1], probe)
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# seed={int(meta.get('seed', 0))}\n")
        writer = csv.writer(fh)
        writer.writerow(["layer", "t", "b", "h", "i", "j", "score"])
        for layer_index, (_, scores) in enumerate(probe.scores):
            t_n, b_n, h_n, n, _ = scores.shape
            for t in range(t_n):
                for b in range(b_n):
                    for h in range(h_n):
                        for i in range(n):
                            for j in range(n):
                                writer.writerow([layer_index, t, b, h, i, j, f"{scores[t, b, h, i, j]:.8f}"])
    print(f"wrote {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "profile": _cmd_profile,
    "export-sfr": _cmd_export_sfr,
    "inspect-attention": _cmd_inspect_attention,
}


def run_command(argv: list[str]) -> int:
    """Dispatch one CLI invocation; returns the process exit code."""
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: USAGE: {exc}", file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        print(f"error: CONFIG: {exc}", file=sys.stderr)
        return 2
    except DatasetError as exc:
        print(f"error: DATA: {exc}", file=sys.stderr)
        return 1
    except (ContractError, NonFiniteError, OSError) as exc:
        print(f"error: RUNTIME: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
