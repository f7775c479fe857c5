"""Command-line entry point: ``fctl <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or usage, 2 a check that ran and
failed.  Floats are printed with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import config as config_mod
from .degrade import DegradeSpec, Kind, degrade_image, read_ppm, write_ppm
from .gradcheck import run_gradcheck
from .loss import EansdlParams, eansdl
from .tensor import DomainError, ShapeError, TensorFormatError, read_tensor_file
from .toynet import load_checkpoint, save_checkpoint
from .train import (
    ROLES,
    evaluate,
    run_experiment,
    train_baseline,
    train_fctl,
    train_ideal,
    write_curve_csv,
)

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_flags(p):
    p.add_argument("--config", type=Path, help="key = value config file (flags override it)")
    group = p.add_argument_group("config overrides")
    for key, (_, help_text) in config_mod.KEYS.items():
        group.add_argument(f"--{key.replace('_', '-')}", dest=f"cfg_{key}", metavar="V", help=help_text)


def _resolve_config(args):
    overrides = {}
    for key in config_mod.KEYS:
        raw = getattr(args, f"cfg_{key}")
        if raw is not None:
            overrides[key] = config_mod.parse_value(key, raw, "--" + key.replace("_", "-"))
    return config_mod.resolve(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fctl", description="Feature-corrective transfer learning on a toy detector.")
    sub = parser.add_subparsers(dest="command", metavar="<command>", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("degrade", help="degrade a PPM image")
    p.add_argument("--in", dest="inp", required=True, type=Path, help="input PPM (P6)")
    p.add_argument("--out", required=True, type=Path, help="output PPM")
    p.add_argument("--kind", required=True, choices=[k.value for k in Kind], help="degradation type")
    p.add_argument("--intensity", type=float, default=0.0, help="in [0, 1]; ignored for bayer")
    p.add_argument("--seed", type=int, default=0, help="seed for rain streaks and dark-frame noise")

    p = sub.add_parser("loss", help="evaluate the structural discrepancy loss between two FMAP files")
    p.add_argument("--a", required=True, type=Path, help="non-ideal feature map")
    p.add_argument("--b", required=True, type=Path, help="ideal feature map")
    p.add_argument("--level", type=int, default=0, help="pyramid level of the maps (sets the radius)")
    p.add_argument("--r0", type=int, default=EansdlParams.r0, help="consistency radius at level 0")
    p.add_argument("--alpha", type=float, default=EansdlParams.alpha, help="attenuation steepness")
    p.add_argument("--beta", type=float, default=EansdlParams.beta, help="attenuation curvature")
    p.add_argument("--lambda", dest="lam", type=float, default=EansdlParams.lambda_consistency,
                   help="weight of the consistency term")
    p.add_argument("--delta", type=float, default=0.0, help="training progress in [0, 1]")

    p = sub.add_parser("gradcheck", help="compare the analytic loss gradient with finite differences")
    p.add_argument("--seed", type=int, required=True, help="selects the random pair")
    p.add_argument("--eps", type=float, default=1e-3, help="central-difference step")

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--mode", required=True, choices=["ideal", "baseline", "fctl"],
                   help="clean pretraining, plain fine-tuning, or corrected fine-tuning")
    p.add_argument("--out", type=Path, help="checkpoint directory to write")
    p.add_argument("--ideal", type=Path, help="static-model checkpoint for --mode fctl (trained if absent)")
    p.add_argument("--curve", type=Path, help="write the per-epoch training curve as CSV")
    _add_config_flags(p)

    p = sub.add_parser("experiment", help="ideal, baseline and corrected runs over several seeds")
    p.add_argument("--seeds", required=True, help="comma-separated seeds (at least 3)")
    p.add_argument("--out", type=Path, help="report file to write")
    p.add_argument("--workers", type=int, default=1, help="seeds run in parallel processes")
    _add_config_flags(p)
    return parser


def _cmd_degrade(args):
    img = read_ppm(args.inp)
    spec = DegradeSpec(Kind(args.kind), 0.0 if args.kind == "bayer" else args.intensity, args.seed)
    write_ppm(degrade_image(img, spec), args.out)
    return 0


def _cmd_loss(args):
    a = read_tensor_file(args.a)
    b = read_tensor_file(args.b)
    params = EansdlParams(alpha=args.alpha, beta=args.beta, lambda_consistency=args.lam, r0=args.r0, delta=args.delta)
    if args.level < 0:
        raise DomainError(f"level must be >= 0, got {args.level}")
    out = eansdl(a, b, params, args.level)
    for name in ("local_term", "consistency_term", "attenuation", "radius_used", "total"):
        print(f"{name}={getattr(out, name)!r}")
    return 0


def _cmd_gradcheck(args):
    if not args.eps > 0:
        raise DomainError(f"eps must be > 0, got {args.eps}")
    res = run_gradcheck(args.seed, args.eps)
    print(f"max_relative_error={res.relative_error!r}")
    print(f"max_elementwise_error={res.max_elementwise!r}")
    ok = res.relative_error < GRADCHECK_TOL
    print("PASS" if ok else f"FAIL (tolerance {GRADCHECK_TOL})")
    return 0 if ok else 2


def _print_metrics(label, m):
    print(f"{label}.det_loss={m.det_loss!r}")
    print(f"{label}.f1={m.f1!r}")


def _cmd_train(args):
    cfg = _resolve_config(args)
    curve = []
    t0 = time.perf_counter()
    if args.mode == "ideal":
        params = train_ideal(cfg, curve)
        _print_metrics("ideal_on_ideal", evaluate(params, None, cfg))
    elif args.mode == "baseline":
        params = train_baseline(cfg, curve)
        _print_metrics("baseline_on_nonideal", evaluate(params, cfg.degrade, cfg))
    else:
        theta_ideal = load_checkpoint(args.ideal) if args.ideal else train_ideal(cfg)
        params = train_fctl(theta_ideal, cfg, curve)
        _print_metrics("fctl_on_nonideal", evaluate(params, cfg.degrade, cfg))
    print(f"seconds={time.perf_counter() - t0:.1f}")
    if args.out:
        save_checkpoint(params, args.out)
    if args.curve:
        write_curve_csv(curve, args.curve)
    return 0


def _cmd_experiment(args):
    cfg = _resolve_config(args)
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise DomainError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    if args.workers < 1:
        raise DomainError(f"--workers must be >= 1, got {args.workers}")

    def progress(seed, metrics):
        line = " ".join(f"{r}={metrics[r].f1:.4f}" for r in ROLES)
        print(f"seed {seed}: f1 {line}", file=sys.stderr, flush=True)

    t0 = time.perf_counter()
    report = run_experiment(cfg, seeds, args.out, progress, workers=args.workers)
    sys.stdout.write(report.to_text())
    print(f"seconds={time.perf_counter() - t0:.1f}")
    return 0


COMMANDS = {
    "degrade": _cmd_degrade,
    "loss": _cmd_loss,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "experiment": _cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (DomainError, ShapeError, TensorFormatError, config_mod.ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"fctl: error: {exc}", file=sys.stderr)
        return 1


run = main
