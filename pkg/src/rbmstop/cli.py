"""Command line entry point: ``rbmstop <verb> ...``.

Exit codes: 0 success, 1 configuration/usage error, 2 a training run
diverged, 3 input/output error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .datasets import format_states, generate, load_dataset, parse_state_line, save_dataset
from .errors import CapabilityError, ParseError
from .experiment import (
    ConfigError,
    generate_samples,
    load_config,
    load_params,
    parse_config,
    run_experiment,
)
from .metrics import aggregate, detect_stop, read_csv, write_csv
from .model import make_rng
from .neighborhood import build_index, save_index
from .pbm import render_pbm

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _cmd_gen_data(args) -> int:
    ds = generate(args.family, args.n_visible, args.seed, args.shift_mode)
    save_dataset(ds, args.out)
    print(f"{ds.name}: {len(ds)} states of {ds.n_visible} bits -> {args.out}")
    return EXIT_OK


def _cmd_build_neighborhood(args) -> int:
    ds = load_dataset(args.data)
    index = build_index(ds, args.d_max, args.max_states)
    save_index(index, args.out)
    for d, size in enumerate(index.sizes()):
        print(f"d={d}\t{size}")
    return EXIT_OK


def _overrides(args) -> dict:
    return {
        "seeds": args.seeds,
        "workers": args.workers,
        "out": args.out,
        "measure_every": args.measure_every,
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "n_gibbs": args.n_gibbs,
    }


def _cmd_train(args) -> int:
    overrides = _overrides(args)
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        cfg = parse_config("", overrides)
    summary = run_experiment(cfg)
    print(f"wrote {summary['out']}")
    for (column, scope), decision in summary["stops"].items():
        if scope == "mean":
            print(f"{column}\tstop_epoch={decision.stop_epoch}")
    if summary["diverged"]:
        for seed, epoch in summary["diverged"].items():
            print(f"seed {seed} diverged at epoch {epoch}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_aggregate(args) -> int:
    traces = [read_csv(p) for p in args.traces]
    agg = aggregate(traces)
    write_csv(agg, args.out)
    print(f"averaged {len(traces)} traces over {len(agg)} epochs -> {args.out}")
    return EXIT_OK


def _cmd_detect_stop(args) -> int:
    trace = read_csv(args.trace)
    columns = args.column or [c for c in trace.columns if c.startswith(("log_likelihood", "log_xi"))]
    for column in columns:
        d = detect_stop(trace, column, args.window, args.patience)
        print(f"{d.criterion}\t{d.stop_epoch}\t{d.trace_value_at_stop!r}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    epoch = args.epoch
    if args.stop_trace:
        epoch = detect_stop(read_csv(args.stop_trace), args.stop_column, args.window, args.patience).stop_epoch
    params = load_params(args.params, epoch)
    samples = generate_samples(params, args.count, args.burn_in, args.thin, make_rng(args.seed))
    # samples may repeat, so they are written as plain lines rather than a Dataset
    arr = np.array([s.bits for s in samples], dtype=np.uint8)
    header = f"# name=samples\n# n_visible={params.n_visible}\n# generator=gibbs epoch={epoch} seed={args.seed}\n"
    Path(args.out).write_text(header + format_states(arr))
    print(f"{len(samples)} samples from epoch {epoch} -> {args.out}")
    return EXIT_OK


def _cmd_render(args) -> int:
    rows = []
    for lineno, line in enumerate(Path(args.states).read_text().splitlines(), start=1):
        line = line.strip()
        if line and not line.startswith("#"):
            rows.append(parse_state_line(line, None, lineno))
    if not rows:
        raise ParseError(f"{args.states}: no states")
    written = render_pbm(rows, args.rows, args.cols, args.out, args.per_row, args.separate)
    print(f"wrote {len(written)} file(s)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rbmstop", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a BS, LSE or RAN dataset file")
    p.add_argument("--family", required=True, help="bs, lse, ran or ranN")
    p.add_argument("--n-visible", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shift-mode", choices=["circular", "zero"], default="circular")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("build-neighborhood", help="write the Hamming shells of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--d-max", type=int, required=True)
    p.add_argument("--max-states", type=int, default=1 << 24)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_neighborhood)

    p = sub.add_parser("train", aliases=["run"], help="run a multi-seed experiment")
    p.add_argument("--config")
    p.add_argument("--seeds", help="e.g. 0-9 or 1,5,7")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--measure-every", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--n-gibbs", type=int)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("aggregate", help="average per-seed traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_aggregate)

    p = sub.add_parser("detect-stop", help="stop epoch for trace columns")
    p.add_argument("--trace", required=True)
    p.add_argument("--column", action="append")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--patience", type=int, default=0)
    p.set_defaults(func=_cmd_detect_stop)

    p = sub.add_parser("sample", help="draw Gibbs samples from a saved model")
    p.add_argument("--params", required=True, help="params_seedN.npz from a run")
    p.add_argument("--epoch", type=int, help="snapshot epoch (default: last)")
    p.add_argument("--stop-trace", help="pick the epoch by stop detection on this trace")
    p.add_argument("--stop-column", default="log_xi_DAs_d1")
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--patience", type=int, default=0)
    p.add_argument("--count", type=int, default=30)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thin", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("render", help="draw states as PBM images")
    p.add_argument("--states", required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--cols", type=int, required=True)
    p.add_argument("--per-row", type=int)
    p.add_argument("--separate", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except KeyError as exc:
        print(f"rbmstop: {exc.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, CapabilityError) as exc:
        print(f"rbmstop: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError) as exc:
        print(f"rbmstop: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"rbmstop: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
