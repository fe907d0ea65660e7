"""Command-line entry point: ``fmla {train,eval,gradcheck,flops}``.

Exit codes: 0 success, 2 configuration error, 3 data or checkpoint error,
4 numeric failure, 5 gradient check failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from .checkpoint import load_model, save_model
from .complexity import write_complexity_csv
from .config import TOY_GRADCHECK, load_run_config
from .data import load_ucr_dataset
from .errors import CheckpointError, ConfigError, DataError, NumericError
from .model import FMLAModel
from .train import evaluate_accuracy, train_epochs
from .verify import TOLERANCE, run_gradcheck

log = logging.getLogger("fmla")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4, 5


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _data_dir(arg) -> Path:
    value = arg or os.environ.get("FMLA_DATA_DIR")
    if not value:
        raise DataError("no --data-dir given and FMLA_DATA_DIR is unset")
    return Path(value)


def cmd_train(args) -> int:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides.setdefault("model.seed", str(args.seed))
        overrides.setdefault("train.seed", str(args.seed))
    run = load_run_config(args.config, overrides)
    explicit = run.explicit

    train, test = load_ucr_dataset(_data_dir(args.data_dir), args.dataset)
    derived = {"model.seq_len": train.seq_len, "model.num_classes": train.num_classes}
    for key, value in derived.items():
        current = getattr(run.model, key.split(".")[1])
        if key in explicit and current != value:
            raise ConfigError(f"{key} = {current} but dataset {args.dataset} has {value}")
    run = run.apply({k: str(v) for k, v in derived.items()})
    for line in run.lines():
        log.info("config %s", line)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "config.txt")
    model = FMLAModel(run.model)
    report = train_epochs(model, train, run.train, test)
    report.write_csv(out / "metrics.csv", wall_clock=run.train.wall_clock)
    save_model(model, out / "model.fmla")
    final = report.rows[-1]
    print(f"{args.dataset},{final.test_acc:.6f},{len(test)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        model = load_model(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from None
    _, test = load_ucr_dataset(_data_dir(args.data_dir), args.dataset)
    cfg = model.config
    if cfg.seq_len != test.seq_len or cfg.num_classes != test.num_classes:
        raise ConfigError(
            f"checkpoint expects seq_len={cfg.seq_len}, num_classes={cfg.num_classes}; "
            f"dataset has seq_len={test.seq_len}, num_classes={test.num_classes}"
        )
    acc = evaluate_accuracy(model, test)
    print(f"{args.dataset},{acc:.6f},{len(test)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.toy_config is None:
        run = load_run_config(None, {**TOY_GRADCHECK, **_overrides(args.set)})
    else:
        run = load_run_config(args.toy_config, _overrides(args.set))
    start = time.perf_counter()
    report = run_gradcheck(run.model, batch=args.batch, seed=args.seed, inject_fault=args.inject_fault)
    for module, err in report.by_module().items():
        print(f"{module}: max_rel_error={err:.3e}")
    print(f"max_rel_error={report.max_error:.3e} worst={report.worst} seconds={time.perf_counter() - start:.1f}")
    if not report.passed:
        return _fail(EXIT_GRADCHECK, f"gradient check failed: {report.worst} has relative error "
                                     f"{report.max_error:.3e} >= {TOLERANCE:g}")
    return EXIT_OK


def cmd_flops(args) -> int:
    try:
        ns = [int(v) for v in args.n_list.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--n-list must be comma-separated integers, got {args.n_list!r}") from None
    if not ns or min(ns) < 1:
        raise ConfigError("--n-list needs at least one positive length")
    run = load_run_config(args.config, _overrides(args.set))
    write_complexity_csv(run.model, ns, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmla", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a UCR dataset and write checkpoint + metrics")
    p.add_argument("--data-dir", help="UCR root (falls back to $FMLA_DATA_DIR)")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on a test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir")
    p.add_argument("--dataset", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full training loss")
    p.add_argument("--toy-config", help="config file replacing the built-in toy model")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("flops", help="write the n,flops_fmla,flops_vanilla,params_fmla table")
    p.add_argument("--n-list", required=True, help="comma-separated sequence lengths")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except (DataError, CheckpointError) as exc:
        return _fail(EXIT_DATA, str(exc))
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, str(exc))


if __name__ == "__main__":
    sys.exit(main())
