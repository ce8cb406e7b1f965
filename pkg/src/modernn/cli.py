"""Command-line front end: gen-data, train, eval, diagnose.

Exit codes are a stable contract for scripting: 0 success, 2 configuration
or contract error, 3 I/O or file-format error.

Heavy imports happen inside the command handlers so --threads (or the
MODERNN_THREADS environment variable) can cap BLAS/OpenMP pools before
numpy first loads.  The compiled convolution kernels are single-threaded
by design; the thread cap matters for the matmul-based fallback backend.
"""

from __future__ import annotations

import argparse
import os
import sys

from .errors import (ConfigError, ContractError, FormatError, ShapeError,
                     TrainingDiverged)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3


def _thread_count(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("MODERNN_THREADS")
    if env is None:
        return None
    try:
        return int(env, 10)
    except ValueError:
        raise ConfigError(f"MODERNN_THREADS must be an integer, got {env!r}") from None


def _apply_threads(n: int | None) -> None:
    if n is None or n <= 0:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _overrides(args, threads: int | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    if args.seed is not None:
        out["seed"] = str(args.seed)
    if getattr(args, "count", None) is not None:
        out["count"] = str(args.count)
    if getattr(args, "modes", None):
        out["modes"] = args.modes
    if args.deterministic:
        out["deterministic"] = "true"
    if threads is not None:
        out["threads"] = str(threads)
    return out


def _resolved(args, threads: int | None):
    from . import config as C
    return C.resolve(args.config, _overrides(args, threads))


def _require_out(args) -> str:
    if args.out is None:
        raise ConfigError("--out is required for this command")
    return args.out


def cmd_gen_data(args, threads) -> int:
    from .config import sprite_spec, write_resolved
    from .datagen import write_dataset

    cfg = _resolved(args, threads)
    out = _require_out(args)
    write_dataset(out, sprite_spec(cfg), cfg.count)
    write_resolved(cfg, out + ".config")
    print(f"wrote {cfg.count} sequences to {out}")
    return EXIT_OK


def cmd_train(args, threads) -> int:
    import numpy as np

    from .config import model_config, train_config, write_resolved
    from .datagen import load_dataset
    from .network import FramePredictor
    from .trainer import (load_checkpoint, model_config_from_checkpoint,
                          restore_model, train)

    cfg = _resolved(args, threads)
    out = _require_out(args)
    dataset = load_dataset(args.data)
    mcfg = model_config(cfg)
    tcfg = train_config(cfg)
    model = FramePredictor(mcfg, np.random.default_rng(cfg.seed))

    start = 0
    adam = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        if model_config_from_checkpoint(ckpt) != mcfg:
            raise ContractError(
                f"{args.resume}: checkpoint model config does not match run config")
        adam = restore_model(model, ckpt)
        start = ckpt.iteration
        if start > tcfg.max_iters:
            raise ContractError(
                f"{args.resume}: checkpoint iteration {start} is beyond max_iters "
                f"{tcfg.max_iters}")

    os.makedirs(out, exist_ok=True)
    write_resolved(cfg, os.path.join(out, "resolved.config"))
    stride = max(1, tcfg.eval_every or tcfg.max_iters // 10 or 1)

    def log(it, loss):
        if (it + 1) % stride == 0 or it + 1 == tcfg.max_iters:
            print(f"iter {it + 1}/{tcfg.max_iters} loss {loss:.6f}")

    result = train(model, dataset, tcfg, out_dir=out, start_iteration=start,
                   adam=adam, log=log)
    with open(os.path.join(out, "loss.csv"), "w") as f:
        f.write("iteration,loss\n")
        for i, v in enumerate(result.loss_trace):
            f.write(f"{start + i},{v!r}\n")
    if result.loss_trace:
        print(f"final loss {result.loss_trace[-1]:.6f}")
    else:
        print("no iterations run")
    return EXIT_OK


def _metric_table(overall, by_mode) -> str:
    header = f"{'':<12}{'mse_pixel':>12}{'mse_frame':>12}{'psnr':>10}{'ssim':>8}{'csi':>8}"
    rows = [header]
    entries = [(f"mode-{m}", rep) for m, rep in sorted(by_mode.items())]
    entries.append(("overall", overall))
    for name, rep in entries:
        a = rep.aggregate
        rows.append(f"{name:<12}{a.mse:>12.4f}{a.mse_frame:>12.4f}"
                    f"{a.psnr:>10.3f}{a.ssim:>8.4f}{a.csi:>8.4f}")
    return "\n".join(rows)


def cmd_eval(args, threads) -> int:
    from .config import write_resolved
    from .datagen import load_dataset
    from .metrics import report_to_csv, report_to_text
    from .trainer import evaluate, load_checkpoint, model_from_checkpoint

    cfg = _resolved(args, threads)
    ckpt = load_checkpoint(args.checkpoint)
    model, _ = model_from_checkpoint(ckpt)
    dataset = load_dataset(args.data)
    overall, by_mode = evaluate(model, dataset, csi_threshold=cfg.csi_threshold,
                                ssim_window=cfg.ssim_window)
    print(_metric_table(overall, by_mode))
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        write_resolved(cfg, os.path.join(args.out, "resolved.config"))
        scopes = [("overall", overall)] + [(f"mode{m}", rep)
                                           for m, rep in sorted(by_mode.items())]
        lines = []
        for scope, rep in scopes:
            report_to_csv(rep, os.path.join(args.out, f"metrics_{scope}.csv"))
            for line in report_to_text(rep).splitlines():
                lines.append(f"{scope}.{line}")
        with open(os.path.join(args.out, "metrics.txt"), "w") as f:
            f.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_diagnose(args, threads) -> int:
    import numpy as np

    from .config import write_resolved
    from .datagen import load_dataset
    from .diagnostics import export_features, extract_states, mode_pair_matrix
    from .trainer import load_checkpoint, model_from_checkpoint

    cfg = _resolved(args, threads)
    out = _require_out(args)
    ckpt = load_checkpoint(args.checkpoint)
    model, _ = model_from_checkpoint(ckpt)
    dataset = load_dataset(args.data)

    records = extract_states(model, dataset)
    os.makedirs(out, exist_ok=True)
    write_resolved(cfg, os.path.join(out, "resolved.config"))
    export_features(records, os.path.join(out, "features.csv"))
    layer = None if cfg.diag_layer < 0 else cfg.diag_layer
    modes, mat = mode_pair_matrix(records, kind=cfg.diag_kind, layer=layer,
                                  rng=np.random.default_rng(cfg.seed))

    lines = [f"kind={cfg.diag_kind}"]
    for i, mi in enumerate(modes):
        for j, mj in enumerate(modes):
            lines.append(f"d_a.{mi}.{mj}={mat[i, j]!r}")
    with open(os.path.join(out, "adistance.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")

    print("A-distance matrix (" + cfg.diag_kind + "):")
    print("        " + "".join(f"mode-{m:<6}" for m in modes))
    for i, mi in enumerate(modes):
        print(f"mode-{mi:<3}" + "".join(f"{mat[i, j]:>11.4f}" for j in range(len(modes))))
    print(f"features: {len(records)} records -> {os.path.join(out, 'features.csv')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--threads", type=int,
                        help="thread cap for BLAS pools (default: MODERNN_THREADS)")
    common.add_argument("--deterministic", action="store_true",
                        help="use the slot-bus mean instead of sampling during training")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key (repeatable)")

    p = argparse.ArgumentParser(
        prog="modernn",
        description="Slot-structured recurrent video prediction on bouncing sprites.")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", parents=[common],
                         help="generate a sprite sequence dataset file")
    gen.add_argument("--count", type=int, help="number of sequences")
    gen.add_argument("--modes", help="comma-separated sprite counts, e.g. 1,2,3")
    gen.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", parents=[common], help="train a model")
    tr.add_argument("--data", required=True, help="dataset file from gen-data")
    tr.add_argument("--resume", help="checkpoint to continue from")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", parents=[common],
                        help="per-mode metric tables for a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.set_defaults(func=cmd_eval)

    dg = sub.add_parser("diagnose", parents=[common],
                        help="export state features and the A-distance matrix")
    dg.add_argument("--checkpoint", required=True)
    dg.add_argument("--data", required=True)
    dg.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _thread_count(args)
        _apply_threads(threads)
        return args.func(args, threads)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
