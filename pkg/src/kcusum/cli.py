"""Command-line front end: detection runs, Monte Carlo evaluation, bound tables, stream generation.

Exit codes: 0 completed without alarm, 2 completed with one or more alarms,
1 error.  Every output embeds the resolved run configuration, so a rerun
from the echoed parameters reproduces the bytes exactly.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

import numpy as np

from . import bounds as bounds_mod
from .cusum import cusum_new, cusum_step, gaussian_model
from .data import ChangeSpec, NormalSpec, generate, load_reference, read_stream, write_stream
from .kernel_cusum import ReferencePool, derive_pool_seed, kcusum_new, kcusum_step
from .kernels import gaussian_kernel_spec
from .simeval import (
    CusumConfig,
    KcusumConfig,
    estimate_arl2fa,
    estimate_esadd,
    tradeoff_curve,
    write_tradeoff_csv,
    write_trials_csv,
)

_ENV_SEED = "KCUSUM_SEED"
# tags mixed with the base seed to derive independent sub-seeds
_REF_TAG = 2
_GEN_REF_TAG = 1


def _derived_seed(base: int, tag: int) -> int:
    return int(np.random.SeedSequence([base, tag]).generate_state(1, np.uint64)[0])


class _RecordWriter:
    """Step / alarm / config records as CSV or JSON lines."""

    def __init__(self, handle, fmt: str, events_only: bool = False):
        self.handle = handle
        self.fmt = fmt
        self.events_only = events_only
        self._header_done = fmt != "csv"

    def config(self, cfg: dict) -> None:
        if self.fmt == "csv":
            self.handle.write("# config: " + json.dumps(cfg, sort_keys=True) + "\n")
        else:
            self.handle.write(json.dumps({"record": "config", **cfg}, sort_keys=True) + "\n")

    def _header(self) -> None:
        if not self._header_done:
            self.handle.write("record,n,z\n")
            self._header_done = True

    def step(self, n: int, z: float) -> None:
        if self.events_only:
            return
        if self.fmt == "csv":
            self._header()
            self.handle.write("step,%d,%.17g\n" % (n, z))
        else:
            self.handle.write('{"record": "step", "n": %d, "z": %s}\n' % (n, repr(z)))

    def alarm(self, t: int, z: float) -> None:
        if self.fmt == "csv":
            self._header()
            self.handle.write("alarm,%d,%.17g\n" % (t, z))
        else:
            self.handle.write('{"record": "alarm", "time": %d, "z": %s}\n' % (t, repr(z)))


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get(_ENV_SEED, "0"))


def _open_input(path: str):
    if path == "-":
        return sys.stdin, False
    return open(path, "r"), True


def _open_output(path: Optional[str]):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w"), True


# ---------------------------------------------------------------------------
# detect
# ---------------------------------------------------------------------------


def _cmd_detect(args) -> int:
    seed = _resolve_seed(args)

    if args.detector == "cusum":
        model = gaussian_model(args.mean0, args.var0, args.mean1, args.var1)
        dimension = 1
        detector_echo = {"kind": "cusum", "h": args.h, "model": dict(model.params)}
    else:
        if args.reference is None:
            raise ValueError("kcusum detection requires --reference")
        pool = load_reference(args.reference, seed=seed, dimension=args.dimension)
        dimension = pool.dimension
        kernel = gaussian_kernel_spec(dimension, bandwidth=args.bandwidth, scale=args.kernel_scale)
        detector_echo = {
            "kind": "kcusum",
            "h": args.h,
            "delta": args.delta,
            "kernel": dict(kernel.params),
            "pool": {**pool.describe(), "source": args.reference},
            "reset": bool(args.reset),
            "reset_pool_size": args.reset_pool_size,
        }

    out, close_out = _open_output(args.output)
    inp, close_inp = _open_input(args.input)
    alarms = 0
    try:
        writer = _RecordWriter(out, args.format, events_only=args.events_only)
        writer.config(
            {
                "command": "detect",
                "detector": detector_echo,
                "input": args.input,
                "format": args.format,
                "seed": seed,
                "events_only": bool(args.events_only),
            }
        )
        rows = read_stream(inp, dimension=args.dimension if args.detector == "kcusum" else 1)
        if args.detector == "cusum":
            alarms = _detect_loop_cusum(rows, model, args, writer)
        else:
            alarms = _detect_loop_kcusum(rows, kernel, pool, seed, args, writer)
        out.flush()
    finally:
        if close_inp:
            inp.close()
        if close_out:
            out.close()
    return 2 if alarms else 0


def _detect_loop_cusum(rows, model, args, writer) -> int:
    alarms = 0
    pos = 0
    state = cusum_new(args.h)
    for row in rows:
        pos += 1
        state, alarm = cusum_step(state, model, row)
        writer.step(pos, state.z)
        if alarm is not None:
            alarms += 1
            writer.alarm(pos, alarm.statistic)
            if not args.reset:
                break
            state = cusum_new(args.h)
    return alarms


def _detect_loop_kcusum(rows, kernel, pool, seed, args, writer) -> int:
    alarms = 0
    pos = 0
    current = pool
    state = kcusum_new(args.h, args.delta, kernel, current)
    rebuild = None
    for row in rows:
        pos += 1
        if rebuild is not None:
            rebuild.append(row)
            if len(rebuild) == args.reset_pool_size:
                current = ReferencePool(np.array(rebuild), derive_pool_seed(seed, alarms))
                state = kcusum_new(args.h, args.delta, kernel, current)
                rebuild = None
            continue
        state, alarm = kcusum_step(state, row)
        writer.step(pos, state.z)
        if alarm is not None:
            alarms += 1
            writer.alarm(pos, alarm.statistic)
            if not args.reset:
                break
            rebuild = []
    return alarms


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _build_eval_detector(args, dimension: int, seed: int):
    if args.detector == "cusum":
        if dimension != 1:
            raise ValueError("the cusum detector is one-dimensional")
        model = gaussian_model(args.mean0, args.var0, args.mean1, args.var1)
        return CusumConfig(model=model, h=args.h), {}
    ref_seed = _derived_seed(seed, _REF_TAG)
    if args.reference is not None:
        pool = load_reference(args.reference, seed=ref_seed, dimension=dimension)
        source = {"reference": args.reference}
    elif args.reference_dist is not None:
        dist = NormalSpec.parse(args.reference_dist, dimension)
        samples = dist.sample(np.random.default_rng(ref_seed), args.reference_size)
        pool = ReferencePool(samples, rng_seed=ref_seed)
        source = {"reference_dist": dist.describe(), "reference_size": args.reference_size}
    else:
        raise ValueError("kcusum evaluation requires --reference or --reference-dist")
    kernel = gaussian_kernel_spec(dimension, bandwidth=args.bandwidth, scale=args.kernel_scale)
    return KcusumConfig(h=args.h, delta=args.delta, kernel=kernel, pool=pool), source


def _cmd_eval(args) -> int:
    seed = _resolve_seed(args)
    dimension = args.dimension
    pre = NormalSpec.parse(args.pre, dimension)
    detector, source_echo = _build_eval_detector(args, dimension, seed)
    os.makedirs(args.output_dir, exist_ok=True)

    cli_echo = {"command": "eval", "mode": args.mode, "seed": seed, "dimension": dimension, **source_echo}

    if args.mode == "arl2fa":
        report = estimate_arl2fa(detector, pre, args.trials, args.horizon, base_seed=seed, workers=args.workers)
    elif args.mode == "esadd":
        change = ChangeSpec(
            pre=pre,
            post=NormalSpec.parse(args.post, dimension),
            change_time=args.change_time,
            length=args.change_time - 1 + args.post_horizon,
            seed=seed,
        )
        report = estimate_esadd(
            detector,
            change,
            args.trials,
            args.post_horizon,
            base_seed=seed,
            mask_noise=args.noise_mask,
            workers=args.workers,
        )
    else:
        if not isinstance(detector, KcusumConfig):
            raise ValueError("the trade-off curve applies to the kcusum detector")
        if args.dk_sq is None:
            raise ValueError("tradeoff mode requires --dk-sq")
        levels = [float(v) for v in args.levels.split(",")]
        change = ChangeSpec(
            pre=pre,
            post=NormalSpec.parse(args.post, dimension),
            change_time=args.change_time,
            length=args.change_time,
            seed=seed,
        )
        rows = tradeoff_curve(
            detector,
            change,
            args.dk_sq,
            levels,
            trials=args.trials,
            base_seed=seed,
            post_horizon=args.post_horizon,
            measure=not args.no_measure,
            workers=args.workers,
        )
        curve_path = os.path.join(args.output_dir, "tradeoff.csv")
        write_tradeoff_csv(rows, curve_path, config={**cli_echo, "levels": levels, "dk_sq": args.dk_sq})
        if args.plot:
            from .report import render_tradeoff

            render_tradeoff(rows, os.path.join(args.output_dir, "tradeoff.png"))
        return 0

    report.config_echo["cli"] = cli_echo
    report.write_json(os.path.join(args.output_dir, "report.json"))
    write_trials_csv(report.trials, os.path.join(args.output_dir, "trials.csv"))
    if args.plot:
        from .report import render_eval_report

        render_eval_report(report, os.path.join(args.output_dir, "report.png"))
    return 0


# ---------------------------------------------------------------------------
# bounds
# ---------------------------------------------------------------------------


def _h_values(args) -> list:
    if args.h_grid is not None:
        parts = args.h_grid.split(":")
        if len(parts) != 3:
            raise ValueError(f"--h-grid wants lo:hi:count, got {args.h_grid!r}")
        lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("--h-grid count must be at least 1")
        return [float(v) for v in np.linspace(lo, hi, count)]
    if args.h:
        return list(args.h)
    raise ValueError("bounds needs --h values or --h-grid")


def _cmd_bounds(args) -> int:
    hs = _h_values(args)
    rows = []
    for h in hs:
        row = {"h": h, "kcusum_arl2fa_lower": bounds_mod.kcusum_arl2fa_lower(h, args.delta, args.k_inf)}
        if args.dk_sq is not None:
            row["kcusum_esadd_upper"] = bounds_mod.kcusum_esadd_upper(h, args.delta, args.k_inf, args.dk_sq)
        row["cusum_arl2fa_lower"] = bounds_mod.cusum_arl2fa_lower(h)
        if args.kl is not None:
            row["cusum_esadd_bound"] = bounds_mod.cusum_esadd_bound(h, args.kl, args.second_moment)
        rows.append(row)

    out, close_out = _open_output(args.output)
    try:
        cfg = {
            "command": "bounds",
            "delta": args.delta,
            "k_inf": args.k_inf,
            "dk_sq": args.dk_sq,
            "kl": args.kl,
            "second_moment": args.second_moment,
            "rate": bounds_mod.kcusum_rate(args.delta, args.k_inf),
            "h": hs,
        }
        out.write("# config: " + json.dumps(cfg, sort_keys=True) + "\n")
        keys = list(rows[0].keys())
        out.write(",".join(keys) + "\n")
        for row in rows:
            out.write(",".join("%.17g" % row[k] for k in keys) + "\n")
        out.flush()
    finally:
        if close_out:
            out.close()
    if args.plot:
        from .report import render_bounds_table

        render_bounds_table(rows, args.plot)
    return 0


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def _cmd_gen(args) -> int:
    seed = _resolve_seed(args)
    spec = ChangeSpec(
        pre=NormalSpec.parse(args.pre, args.dimension),
        post=NormalSpec.parse(args.post, args.dimension),
        change_time=args.change_time,
        length=args.length,
        seed=seed,
    )
    samples = generate(spec)
    write_stream(args.output, samples, header_comments=["config: " + json.dumps(spec.describe(), sort_keys=True)])
    if args.reference_out is not None:
        ref_seed = _derived_seed(seed, _GEN_REF_TAG)
        ref = spec.pre.sample(np.random.default_rng(ref_seed), args.reference_size)
        write_stream(
            args.reference_out,
            ref,
            header_comments=[
                "config: "
                + json.dumps(
                    {"pre": spec.pre.describe(), "reference_size": args.reference_size, "seed": ref_seed},
                    sort_keys=True,
                )
            ],
        )
    return 0


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_kcusum_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--delta", type=float, default=0.0, help="drift subtracted per block")
    p.add_argument("--bandwidth", type=float, default=1.0, help="Gaussian kernel bandwidth")
    p.add_argument("--kernel-scale", type=float, default=1.0, help="kernel scale factor (sup-norm bound)")
    p.add_argument("--reference", type=str, default=None, help="reference pool stream file")


def _add_cusum_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mean0", type=float, default=0.0, help="pre-change mean")
    p.add_argument("--var0", type=float, default=1.0, help="pre-change variance")
    p.add_argument("--mean1", type=float, default=1.0, help="post-change mean")
    p.add_argument("--var1", type=float, default=1.0, help="post-change variance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kcusum", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="run a detector over a stream file or stdin")
    p.add_argument("--detector", choices=["cusum", "kcusum"], required=True)
    p.add_argument("--h", type=float, required=True, help="detection threshold")
    p.add_argument("--input", type=str, default="-", help="stream file, or - for stdin")
    p.add_argument("--output", type=str, default="-", help="record file, or - for stdout")
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    p.add_argument("--dimension", type=int, default=None, help="expected observation dimension")
    p.add_argument("--seed", type=int, default=None, help=f"reference sampling seed (default ${_ENV_SEED} or 0)")
    p.add_argument("--events-only", action="store_true", help="suppress per-step records")
    p.add_argument("--reset", action="store_true", help="resume detection after each alarm")
    p.add_argument("--reset-pool-size", type=int, default=64, help="observations used to rebuild the reference")
    _add_cusum_flags(p)
    _add_kcusum_flags(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="Monte Carlo run-length / delay estimation")
    p.add_argument("--mode", choices=["arl2fa", "esadd", "tradeoff"], required=True)
    p.add_argument("--detector", choices=["cusum", "kcusum"], default="kcusum")
    p.add_argument("--h", type=float, default=0.0, help="detection threshold")
    p.add_argument("--pre", type=str, required=True, help="pre-change distribution, normal:MEANS:VARS")
    p.add_argument("--post", type=str, default=None, help="post-change distribution")
    p.add_argument("--change-time", type=int, default=1)
    p.add_argument("--dimension", type=int, default=1)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--horizon", type=int, default=100000, help="censoring horizon for arl2fa mode")
    p.add_argument("--post-horizon", type=int, default=None, help="post-change samples per esadd trial")
    p.add_argument("--noise-mask", action="store_true", help="one base stream overlaid with per-trial noise")
    p.add_argument("--levels", type=str, default="10,100,1000,10000", help="false-alarm levels for tradeoff mode")
    p.add_argument("--dk-sq", type=float, default=None, help="squared kernel distance of the task")
    p.add_argument("--no-measure", action="store_true", help="tradeoff: skip the Monte Carlo measurement")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--output-dir", type=str, default=".")
    p.add_argument("--plot", action="store_true", help="render figures next to the data files")
    p.add_argument("--reference-dist", type=str, default=None, help="generate the reference pool from a descriptor")
    p.add_argument("--reference-size", type=int, default=1024)
    _add_cusum_flags(p)
    _add_kcusum_flags(p)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bounds", help="closed-form bound tables over a threshold grid")
    p.add_argument("--h", type=float, nargs="*", default=None, help="explicit threshold values")
    p.add_argument("--h-grid", type=str, default=None, help="lo:hi:count linear grid")
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--k-inf", type=float, required=True)
    p.add_argument("--dk-sq", type=float, default=None)
    p.add_argument("--kl", type=float, default=None, help="post-change KL drift for the parametric delay bound")
    p.add_argument("--second-moment", type=float, default=0.0)
    p.add_argument("--output", type=str, default="-")
    p.add_argument("--plot", type=str, default=None, help="write a bound-curve figure to this path")
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("gen", help="generate a synthetic change stream (and optional reference pool)")
    p.add_argument("--pre", type=str, required=True)
    p.add_argument("--post", type=str, required=True)
    p.add_argument("--change-time", type=int, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--dimension", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", type=str, required=True)
    p.add_argument("--reference-out", type=str, default=None)
    p.add_argument("--reference-size", type=int, default=1024)
    p.set_defaults(func=_cmd_gen)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "mode", None) in ("esadd", "tradeoff"):
        if args.post is None:
            parser.error(f"--post is required for {args.mode} mode")
        if args.mode == "esadd" and args.post_horizon is None:
            parser.error("--post-horizon is required for esadd mode")
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
