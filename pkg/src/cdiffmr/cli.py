"""Command-line front end.

Exit codes: 0 success, 1 failed ``--verify`` check, 2 I/O failure, 3 training
divergence, 64 usage error, 65 configuration or data mismatch.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from cdiffmr import __version__
from cdiffmr import io as cio
from cdiffmr.degradation import measure
from cdiffmr.errors import CDiffError, ConfigurationError, FormatError, ShapeError, TrainingDivergedError
from cdiffmr.evaluation import ROW_FIELDS, METRICS, evaluate
from cdiffmr.fourier import fft2c, rel_l2_error
from cdiffmr.masks import (
    ScheduleKind,
    ScheduleSpec,
    column_count,
    build_mask_family,
    gen_task_mask,
    locate_start_step,
    sampling_rate,
)
from cdiffmr.metrics import psnr, ssim
from cdiffmr.phantom import phantom_stack
from cdiffmr.restorers import OracleRestorer, ZeroFillRestorer
from cdiffmr.sampler import MaskMismatchWarning, ReverseRunConfig, ablate_start_point, effective_start, reconstruct
from cdiffmr.training import TrainConfig, train

log = logging.getLogger("cdiffmr")

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_IO = 2
EXIT_DIVERGED = 3
EXIT_USAGE = 64
EXIT_CONFIG = 65

MANIFEST = "run.cfg"
SEED_ENV = "CDIFF_SEED"

# built-in values for options whose default may also come from a checkpoint
FAMILY_DEFAULTS = {"kind": "log", "T": 100, "sr_min": 0.01, "family_cf": None, "family_seed": None}


class UsageError(Exception):
    pass


class VerifyError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def on_off(text: str) -> bool:
    t = text.strip().lower()
    if t in ("on", "true", "yes", "1"):
        return True
    if t in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def read_config(path) -> dict:
    """Plain ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"config line without '=': {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def default_seed() -> int:
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


# -- argument parsing ------------------------------------------------------


def _schedule_flags(p):
    p.add_argument("--kind", choices=["lin", "log"], default=None, help="sampling-rate schedule")
    p.add_argument("--T", type=int, default=None, help="total diffusion steps (100)")
    p.add_argument("--sr-min", type=float, default=None, help="sampling rate at t=T (0.01)")
    p.add_argument("--family-cf", type=float, default=None,
                   help="center fraction of the family masks (default: one DC column)")
    p.add_argument("--family-seed", type=int, default=None, help="family column shuffle seed")


def _restorer_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--ckpt", help="trained checkpoint (CKP1)")
    g.add_argument("--oracle", action="store_true", help="use the ground truth as restorer")
    g.add_argument("--zerofill", action="store_true", help="pass-through restorer")


def _reverse_flags(p):
    p.add_argument("--dcc", type=on_off, default=True, metavar="on|off")
    p.add_argument("--spc", type=on_off, default=True, metavar="on|off")
    p.add_argument("--terminal-dc", type=on_off, default=True, metavar="on|off")
    p.add_argument("--project-start", type=on_off, default=True, metavar="on|off",
                   help="project the zero-filled start onto the start-step family mask")
    p.add_argument("--center-fraction", type=float, default=0.04, help="task mask center fraction")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="cdiffmr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"cdiffmr {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"global seed (env {SEED_ENV})")
    common.add_argument("--config", help="key=value defaults file, overridden by flags")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-ellipses", type=int, default=6)
    p.add_argument("--phase-order", type=int, default=2)
    p.add_argument("--out", required=True)

    p = sub.add_parser("schedule", parents=[common], help="print a sampling-rate schedule")
    _schedule_flags(p)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--af", type=float, default=None, help="report the start step for this AF")

    p = sub.add_parser("mask", parents=[common], help="write a task mask and/or mask family")
    _schedule_flags(p)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--af", type=float, default=8.0)
    p.add_argument("--center-fraction", type=float, default=0.04)
    p.add_argument("--out", help="task mask file (KMS1)")
    p.add_argument("--family-out", help="mask family file (KFM1)")

    p = sub.add_parser("train", parents=[common], help="train the conv restorer")
    p.add_argument("--data", required=True)
    _schedule_flags(p)
    p.add_argument("--grad-steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--loss", choices=["L1", "L2"], default="L1")
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("recon", parents=[common], help="reconstruct one image")
    p.add_argument("--input", required=True, help="ground-truth image (CIM1) to undersample")
    _restorer_flags(p)
    _schedule_flags(p)
    _reverse_flags(p)
    p.add_argument("--af", type=float, default=8.0)
    p.add_argument("--mask", help="task mask file (KMS1); overrides --af")
    p.add_argument("--snap", action="store_true", help="use the family mask at the SPC start step")
    p.add_argument("--start", type=int, default=None, help="start step override")
    p.add_argument("--snapshots", action="store_true", help="store per-step images")
    p.add_argument("--pgm", action="store_true", help="also dump magnitude images as PGM")
    p.add_argument("--verify", action="store_true", help="re-check invariants, fail on violation")
    p.add_argument("--out", required=True, help="run directory")

    p = sub.add_parser("eval", parents=[common], help="evaluate a restorer over a grid")
    p.add_argument("--data", required=True)
    _restorer_flags(p)
    _schedule_flags(p)
    _reverse_flags(p)
    p.add_argument("--af", type=float_list, default=[8.0, 16.0], help="comma-separated AFs")
    p.add_argument("--schedule", type=str_list, default=["lin", "log"], help="comma-separated kinds")
    p.add_argument("--snap", action="store_true")
    p.add_argument("--sweep-start", default=None,
                   help="start-step sweep A..B[:STEP]; A, B may use Tp for the SPC step")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="run directory")
    return parser, sub.choices


def parse_args(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in subs), None)
    if known.config and command:
        try:
            cfg = read_config(known.config)
        except OSError as exc:
            raise UsageError(f"cannot read config {known.config}: {exc}") from None
        apply_config(subs[command], cfg, command)
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = default_seed()
    return args


def apply_config(sub: argparse.ArgumentParser, cfg: dict, command: str) -> None:
    """Install config values as parser defaults so flags still win."""
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        if key in ("command", "config"):
            continue
        if key not in actions:
            raise UsageError(f"unknown config key {key!r} for {command}")
        action = actions[key]
        if value == "None":
            defaults[key] = None
        elif isinstance(action, argparse._StoreTrueAction):
            defaults[key] = on_off(value)
        elif action.type is not None:
            try:
                defaults[key] = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"bad value for config key {key!r}: {exc}") from None
        else:
            defaults[key] = value
        action.required = False
    sub.set_defaults(**defaults)


# -- helpers ---------------------------------------------------------------


def write_manifest(out_dir: Path, args: argparse.Namespace, extra: dict | None = None) -> None:
    """Echo every resolved option; non-config facts go in comment lines."""
    lines = [
        f"# cdiffmr run manifest, command={args.command}",
        f"# tool_version={__version__}",
        f"# created={datetime.now(timezone.utc).isoformat(timespec='seconds')}",
    ]
    for key, value in (extra or {}).items():
        lines.append(f"# {key}={value}")
    for key, value in sorted(vars(args).items()):
        if key in ("command", "config", "verbose"):
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    (out_dir / MANIFEST).write_text("\n".join(lines) + "\n")


def resolve_family_args(args, meta: dict | None = None) -> None:
    """Fill unset family options from checkpoint metadata, then built-ins."""
    meta = meta or {}
    from_meta = {"kind": "schedule", "T": "T", "sr_min": "sr_min",
                 "family_cf": "family_center_fraction", "family_seed": "family_seed"}
    for key, default in FAMILY_DEFAULTS.items():
        if getattr(args, key) is None:
            value = meta.get(from_meta[key], default)
            setattr(args, key, value)
    if args.family_seed is None:
        args.family_seed = args.seed
    args.kind = ScheduleKind.parse(args.kind).value
    args.T = int(args.T)
    args.sr_min = float(args.sr_min)


def schedule_from(args) -> ScheduleSpec:
    return ScheduleSpec(args.kind, args.T, args.sr_min)


def family_from(args, width: int, kind=None):
    spec = ScheduleSpec(kind or args.kind, args.T, args.sr_min)
    return build_mask_family(spec, width, args.family_cf, args.family_seed)


def _restorer_choice(args):
    if args.ckpt:
        return "ckpt"
    if args.oracle:
        return "oracle"
    if args.zerofill:
        return "zerofill"
    raise UsageError("one of --ckpt, --oracle or --zerofill is required")


def parse_sweep(text: str, tprime: int, T: int) -> list[int]:
    def term(s: str) -> int:
        s = s.strip().replace("T'", "Tp")
        if s.startswith("Tp"):
            rest = s[2:].strip()
            return tprime + (int(rest) if rest else 0)
        return int(s)

    body, _, step = text.partition(":")
    lo, sep, hi = body.partition("..")
    if not sep:
        raise UsageError(f"sweep must look like A..B[:STEP], got {text!r}")
    stride = int(step) if step else 1
    if stride < 1:
        raise UsageError("sweep step must be positive")
    a, b = term(lo), term(hi)
    return [s for s in range(a, b + 1, stride) if 1 <= s <= T]


# -- subcommands -----------------------------------------------------------


def cmd_phantom(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    if args.size < 16:
        raise UsageError("--size must be at least 16")
    images = phantom_stack(args.count, args.size, args.seed, args.n_ellipses, args.phase_order)
    out = Path(args.out)
    cio.write_dataset(out, images)
    write_manifest(out, args)
    print(f"wrote {args.count} phantoms of size {args.size} to {out}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    resolve_family_args(args)
    spec = schedule_from(args)
    tprime = None
    if args.af is not None:
        if args.af < 1:
            raise ConfigurationError(f"acceleration factor must be >= 1, got {args.af}")
        tprime = locate_start_step(1.0 / args.af, spec)
    print(f"# schedule={spec.kind.label} T={spec.T} sr_min={spec.sr_min:g} width={args.width}")
    print(f"{'t':>4} {'SR_t':>10} {'columns':>8}")
    for t in range(spec.T + 1):
        sr = sampling_rate(spec, t)
        print(f"{t:>4} {sr:>10.6f} {column_count(sr, args.width):>8}")
    if tprime is not None:
        print(f"AF={args.af:g} task_sr={1.0 / args.af:.6f} T'={tprime}")
    return EXIT_OK


def cmd_mask(args) -> int:
    resolve_family_args(args)
    if not args.out and not args.family_out:
        raise UsageError("give --out and/or --family-out")
    if args.out:
        mask = gen_task_mask(args.width, args.af, args.center_fraction, args.seed)
        cio.write_mask(args.out, mask)
        print(f"task mask: {mask.n_selected}/{mask.width} columns -> {args.out}")
    if args.family_out:
        fam = family_from(args, args.width)
        cio.write_family(args.family_out, fam)
        print(f"mask family: T={fam.T} {fam.schedule.kind.label} -> {args.family_out}")
    return EXIT_OK


def cmd_train(args) -> int:
    resolve_family_args(args)
    _, images = cio.read_dataset(args.data)
    fam = family_from(args, images.shape[2])
    config = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, grad_steps=args.grad_steps,
                         loss_norm=args.loss, seed=args.seed, channels=args.channels, depth=args.depth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        result = train(images, fam, config, log_every=100 if args.verbose else 0)
    except TrainingDivergedError as exc:
        if exc.checkpoint is not None:
            cio.write_checkpoint(out / "model.ckp.diverged", exc.checkpoint)
        write_manifest(out, args, {"status": f"diverged at step {exc.step}"})
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    cio.write_checkpoint(out / "model.ckp", result.checkpoint)
    cio.write_csv(out / "loss.csv", ["step", "loss"], [(s, repr(v)) for s, v in result.losses])
    write_manifest(out, args)
    final = result.checkpoint.metadata["final_loss"]
    print(f"trained {args.grad_steps} steps in {time.perf_counter() - t0:.1f}s, final loss {final:.6g}")
    return EXIT_OK


def _load_restorer(args, truth=None):
    choice = _restorer_choice(args)
    if choice == "ckpt":
        ckpt = cio.read_checkpoint(args.ckpt)
        return ckpt.to_restorer(), ckpt.metadata
    if choice == "oracle":
        return (OracleRestorer(truth) if truth is not None else OracleRestorer), {}
    return ZeroFillRestorer(), {}


def _task_mask(args, fam, width, seed):
    if args.snap:
        return fam.mask(locate_start_step(1.0 / args.af, fam.schedule))
    return gen_task_mask(width, args.af, args.center_fraction, seed)


def cmd_recon(args) -> int:
    truth = cio.read_image(args.input)
    restorer, meta = _load_restorer(args, truth)
    resolve_family_args(args, meta)
    width = truth.shape[1]
    fam = family_from(args, width)
    if args.mask:
        mask = cio.read_mask(args.mask)
        if mask.width != width:
            raise ShapeError(f"mask width {mask.width} != image width {width}")
    else:
        mask = _task_mask(args, fam, width, args.seed)
    cfg = ReverseRunConfig(mask, fam, use_spc=args.spc, use_dcc=args.dcc, start_override=args.start,
                           terminal_dc=args.terminal_dc, record_trajectory=args.snapshots,
                           project_start=args.project_start)
    y = measure(truth, mask)
    t0 = time.perf_counter()
    recon, trace = reconstruct(y, restorer, cfg)
    seconds = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cio.write_image(out / "recon.cim", recon)
    cio.write_mask(out / "mask.kms", mask)
    cio.write_csv(out / "trace.csv", ["t", "dcc_correction_l2"],
                  [(t, repr(c)) for t, c in trace.rows()])
    if args.snapshots:
        snap_dir = out / "snapshots"
        snap_dir.mkdir(exist_ok=True)
        for t, img in zip(trace.steps, trace.snapshots):
            cio.write_image(snap_dir / f"x_{t - 1:03d}.cim", img)
    if args.pgm:
        cio.write_pgm(out / "recon.pgm", recon)
        cio.write_pgm(out / "zero_filled.pgm", np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(y), norm="ortho")))
    err = rel_l2_error(recon, truth)
    write_manifest(out, args)
    print(f"steps={len(trace)} start={trace.start} seconds={seconds:.3f}")
    print(f"rel_l2_error={err:.3e} psnr={psnr(recon, truth):.3f} ssim={ssim(recon, truth):.6f}")

    if args.verify:
        _verify_recon(args, cfg, trace.start, y, recon, truth, err)
        print("verify: ok")
    return EXIT_OK


def _verify_recon(args, cfg, start, y, recon, truth, err) -> None:
    if cfg.use_dcc or cfg.terminal_dc:
        k = fft2c(recon)[:, cfg.task_mask.selected]
        ref = y[:, cfg.task_mask.selected]
        drift = np.linalg.norm(k - ref) / np.linalg.norm(ref)
        if drift > 1e-12:
            raise VerifyError(f"measured data altered: relative drift {drift:.3e}")
    if args.oracle and (start == 0 or cfg.family.mask(start).issubset(cfg.task_mask)):
        if err > 1e-10:
            raise VerifyError(f"oracle recovery failed: relative error {err:.3e}")


def cmd_eval(args) -> int:
    names, images = cio.read_dataset(args.data)
    restorer, meta = _load_restorer(args)
    resolve_family_args(args, meta)
    width = images.shape[2]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    families = {kind: family_from(args, width, kind) for kind in args.schedule}
    cfgs = []
    for af in args.af:
        for kind in args.schedule:
            fam = families[kind]

            def make(i, af=af, fam=fam):
                if args.snap:
                    mask = fam.mask(locate_start_step(1.0 / af, fam.schedule))
                else:
                    mask = gen_task_mask(width, af, args.center_fraction, args.seed + i)
                return ReverseRunConfig(mask, fam, use_spc=args.spc, use_dcc=args.dcc,
                                        terminal_dc=args.terminal_dc, project_start=args.project_start)

            cfgs.append(make)

    report_path = out / "report.csv"
    with open(report_path, "w") as fh:
        fh.write(",".join(ROW_FIELDS) + "\n")

    def flush(rows):
        with open(report_path, "a") as fh:
            for r in rows:
                fh.write(",".join(_fmt(v) for v in r.as_tuple()) + "\n")

    report = evaluate(images, restorer, cfgs, ids=names, jobs=args.jobs, on_slice=flush)
    summary_rows, bar_rows = [], []
    for (af, sched), stats in report.summary.items():
        summary_rows.append((_fmt(af), sched, "mean", *(_fmt(stats[m][0]) for m in METRICS)))
        summary_rows.append((_fmt(af), sched, "std", *(_fmt(stats[m][1]) for m in METRICS)))
        bar_rows.append((f"AFx{af:g} {sched}", _fmt(stats["psnr"][0]), _fmt(stats["ssim"][0])))
    cio.write_csv(out / "summary.csv", ["af", "schedule", "stat", *METRICS], summary_rows)
    cio.write_csv(out / "bars.csv", ["config", "mean_psnr", "mean_ssim"], bar_rows)

    if args.sweep_start:
        sweep_rows = []
        for i, (name, truth) in enumerate(zip(names, images)):
            net = restorer(truth) if args.oracle else restorer
            for make in cfgs:
                cfg = make(i)
                tprime = effective_start(cfg)
                starts = parse_sweep(args.sweep_start, tprime, cfg.family.T)
                with warnings.catch_warnings():
                    # starts below T' mismatch the task mask by design
                    warnings.simplefilter("ignore", MaskMismatchWarning)
                    rows = ablate_start_point(measure(truth, cfg.task_mask), net, cfg, starts, truth)
                for r in rows:
                    sweep_rows.append((name, _fmt(cfg.task_mask.accel_factor), cfg.family.schedule.kind.label,
                                       tprime, r.start, _fmt(r.psnr), _fmt(r.ssim)))
        cio.write_csv(out / "sweep.csv", ["slice", "af", "schedule", "tprime", "start", "psnr", "ssim"],
                      sweep_rows)
    write_manifest(out, args)
    for (af, sched), stats in report.summary.items():
        print(f"AFx{af:g} {sched}: psnr {stats['psnr'][0]:.3f} ssim {stats['ssim'][0]:.4f} "
              f"steps {stats['steps'][0]:.1f}")
    return EXIT_OK


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


COMMANDS = {
    "phantom": cmd_phantom,
    "schedule": cmd_schedule,
    "mask": cmd_mask,
    "train": cmd_train,
    "recon": cmd_recon,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.showwarning = _show_warning
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except VerifyError as exc:
        print(f"verify: FAILED: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except CDiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
