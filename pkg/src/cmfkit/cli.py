"""``cmfkit`` command line.

Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 solver did not
converge (only with ``--strict``) or failed numerically.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import io, oracles
from .alm import SolverConfig
from .denoise import denoise
from .exceptions import InvalidArgumentError, NumericalFailureError
from .grid import warp
from .maxflow import BinarySegProblem, solve, threshold
from .potts import PottsProblem, argmax_label
from .potts import solve as solve_potts
from .priors import (
    OrderChain,
    decode_partial_order,
    solve_coseg,
    solve_linear_order,
    solve_partial_order,
    solve_star_prior,
    solve_volume_prior,
    star_vector_field,
)
from .registration import (
    RegParams,
    register_pair,
    register_sequence,
    register_volume_preserving,
)

log = logging.getLogger("cmfkit")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SOLVER = 0, 2, 3, 4
TV_NORM_FLAGS = {"iso": "isotropic", "aniso": "anisotropic"}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("solver")
    g.add_argument("--alpha", type=float, help="TV weight")
    g.add_argument("--c", type=float, default=0.3, help="ALM penalty (default 0.3)")
    g.add_argument("--iters", type=int, help="maximum ALM iterations")
    g.add_argument("--tol", type=float, help="stop when mean |c * residual| < tol")
    g.add_argument("--tv-norm", choices=sorted(TV_NORM_FLAGS), default="iso")
    g.add_argument("--diagnostics", metavar="CSV", help="write per-iteration diagnostics")
    g.add_argument("--threads", type=int, help="worker threads (default $CMFKIT_THREADS)")
    g.add_argument("--strict", action="store_true", help="exit 4 if the solver did not converge")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="cmfkit", description="Dual ALM solvers for TV denoising, segmentation and registration.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("denoise", parents=[common], help="TV-L2 / TV-L1 denoising")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--fidelity", choices=["l2", "l1"], default="l2")

    p = sub.add_parser("segment", parents=[common], help="binary segmentation (optional volume or star prior)")
    _cost_args(p)
    p.add_argument("--output", required=True, help="binary mask")
    p.add_argument("--relaxed", help="also write the relaxed labeling")
    p.add_argument("--volume-prior", type=float, metavar="V", help="target volume in voxels")
    p.add_argument("--gamma", type=float, default=1.0, help="volume prior weight")
    p.add_argument("--star-cx", type=float)
    p.add_argument("--star-cy", type=float)
    p.add_argument("--star-cz", type=float)

    p = sub.add_parser("potts", parents=[common], help="multiphase Potts segmentation")
    _multi_cost_args(p)
    p.add_argument("--output", required=True, help="label map, values 1..n")

    p = sub.add_parser("order", parents=[common], help="nested regions (linear order)")
    p.add_argument("--costs", nargs="+", required=True, help="level costs D_1 .. D_n")
    p.add_argument("--alphas", type=float, nargs="+", help="per-surface weights (default --alpha)")
    p.add_argument("--output", required=True, help="level map, values 1..n")

    p = sub.add_parser("partial-order", parents=[common], help="regions m, b, s inside C; C and B partition")
    p.add_argument("--costs", nargs=4, required=True, metavar=("M", "B_", "S", "BG"))
    p.add_argument("--output", required=True, help="leaf labels 0..3 (m, b, s, B)")

    p = sub.add_parser("coseg", parents=[common], help="co-segmentation of two images")
    p.add_argument("--cs1", required=True)
    p.add_argument("--ct1", required=True)
    p.add_argument("--cs2", required=True)
    p.add_argument("--ct2", required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--output1", required=True)
    p.add_argument("--output2", required=True)

    p = sub.add_parser("register", parents=[common], help="non-rigid registration")
    p.add_argument("--moving", help="moving image (warped onto --fixed)")
    p.add_argument("--fixed")
    p.add_argument("--sequence", nargs="+", help="frames I_1 .. I_{n+1} (temporal coupling)")
    p.add_argument("--output", required=True,
                   help="deformation header (.json); with --sequence a prefix, one file per pair")
    p.add_argument("--warped", help="write the warped moving image")
    p.add_argument("--volume-mask", help="binary mask for the volume-preserving penalty")
    p.add_argument("--gamma", type=float, default=0.0, help="volume or temporal prior weight")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--warps", type=int, default=10)

    p = sub.add_parser("oracle", parents=[common], help="reference solvers for cross-checks")
    p.add_argument("kind", choices=["mincut", "exhaustive", "denoise"])
    p.add_argument("--cs")
    p.add_argument("--ct")
    p.add_argument("--input", help="noisy image (denoise oracle)")
    p.add_argument("--fidelity", choices=["l2", "l1"], default="l2")
    p.add_argument("--output", help="write the oracle labeling / image")
    return parser


def _cost_args(p):
    p.add_argument("--cs", help="cost of background (u = 0)")
    p.add_argument("--ct", help="cost of foreground (u = 1)")
    p.add_argument("--input", help="image; costs |I - bg| and |I - fg| (instead of --cs/--ct)")
    p.add_argument("--fg", type=float, default=1.0, help="foreground intensity for --input")
    p.add_argument("--bg", type=float, default=0.0, help="background intensity for --input")


def _multi_cost_args(p):
    p.add_argument("--costs", nargs="+", help="region cost maps rho_1 .. rho_n")
    p.add_argument("--input", help="image; costs |I - mean_i| (instead of --costs)")
    p.add_argument("--means", type=float, nargs="+", help="region intensities for --input")


def _cfg(args, **defaults):
    kw = {"c": args.c, "tv_norm": TV_NORM_FLAGS[args.tv_norm]}
    kw.update(defaults)
    if args.iters is not None:
        kw["max_iters"] = args.iters
    if args.tol is not None:
        kw["tol"] = args.tol
    return SolverConfig(**kw)


def _alpha(args, default):
    return default if args.alpha is None else args.alpha


def _binary_problem(args, alpha):
    if args.input:
        im = io.read_field(args.input)
        return BinarySegProblem(np.abs(im - args.bg), np.abs(im - args.fg), alpha)
    if not (args.cs and args.ct):
        raise InvalidArgumentError("give --cs and --ct, or --input")
    return BinarySegProblem(io.read_field(args.cs), io.read_field(args.ct), alpha)


def _mismatch(fields, names):
    shapes = [np.shape(f) for f in fields]
    if len(set(shapes)) > 1:
        listing = ", ".join(f"{n}={s}" for n, s in zip(names, shapes))
        raise InvalidArgumentError(f"grid mismatch: {listing}")


def _cmd_denoise(args):
    f = io.read_field(args.input)
    u, diag = denoise(f, _alpha(args, 0.1), args.fidelity, _cfg(args))
    io.write_field(args.output, u)
    return diag


def _cmd_segment(args):
    prob = _binary_problem(args, _alpha(args, 0.3))
    cfg = _cfg(args)
    star = [v for v in (args.star_cx, args.star_cy, args.star_cz) if v is not None]
    if star and args.volume_prior is not None:
        raise InvalidArgumentError("--volume-prior and --star-* are exclusive")
    if star:
        if len(star) != len(prob.shape):
            raise InvalidArgumentError(f"give one --star-c* per axis ({len(prob.shape)}), got {len(star)}")
        # flags are in x, y, z order; arrays are indexed (z,) y, x
        u, diag = solve_star_prior(prob, star_vector_field(star[::-1], prob.shape), cfg)
    elif args.volume_prior is not None:
        u, diag = solve_volume_prior(prob, args.gamma, args.volume_prior, cfg)
    else:
        u, _, diag = solve(prob, cfg)
    io.write_mask(args.output, threshold(u))
    if args.relaxed:
        io.write_field(args.relaxed, np.clip(u, 0.0, 1.0))
    return diag


def _cmd_potts(args):
    if args.input:
        if not args.means:
            raise InvalidArgumentError("--input needs --means")
        im = io.read_field(args.input)
        costs = [np.abs(im - m) for m in args.means]
    elif args.costs:
        costs = [io.read_field(p) for p in args.costs]
        _mismatch(costs, args.costs)
    else:
        raise InvalidArgumentError("give --costs or --input with --means")
    u, diag = solve_potts(PottsProblem(costs, _alpha(args, 0.3)), _cfg(args))
    io.write_labels(args.output, argmax_label(u))
    return diag


def _cmd_order(args):
    costs = [io.read_field(p) for p in args.costs]
    _mismatch(costs, args.costs)
    alphas = args.alphas if args.alphas else [_alpha(args, 0.3)] * (len(costs) - 1)
    if len(alphas) != len(costs) - 1:
        raise InvalidArgumentError(f"need {len(costs) - 1} --alphas, got {len(alphas)}")
    u, diag = solve_linear_order(OrderChain(costs, alphas), _cfg(args))
    io.write_labels(args.output, 1 + np.sum(u > 0.5, axis=0))
    return diag


def _cmd_partial_order(args):
    costs = [io.read_field(p) for p in args.costs]
    _mismatch(costs, args.costs)
    u, diag = solve_partial_order(costs, _alpha(args, 0.3), _cfg(args))
    io.write_labels(args.output, decode_partial_order(u)[0])
    return diag


def _cmd_coseg(args):
    maps = [io.read_field(p) for p in (args.cs1, args.ct1, args.cs2, args.ct2)]
    _mismatch(maps, ["cs1", "ct1", "cs2", "ct2"])
    alpha = _alpha(args, 0.3)
    p1 = BinarySegProblem(maps[0], maps[1], alpha)
    p2 = BinarySegProblem(maps[2], maps[3], alpha)
    u1, u2, diag = solve_coseg(p1, p2, args.beta, _cfg(args))
    io.write_mask(args.output1, threshold(u1))
    io.write_mask(args.output2, threshold(u2))
    return diag


def _cmd_register(args):
    record = bool(args.diagnostics)
    cfg = _cfg(args, max_iters=300, record_energies=record)
    params = RegParams(args.levels, args.warps, _alpha(args, 0.2), args.gamma, cfg)
    if args.sequence:
        if args.moving or args.fixed or args.volume_mask:
            raise InvalidArgumentError("--sequence excludes --moving, --fixed and --volume-mask")
        frames = [io.read_field(p) for p in args.sequence]
        _mismatch(frames, args.sequence)
        fields, diag = register_sequence(frames, params)
        base, ext = os.path.splitext(args.output)
        for k, u in enumerate(fields):
            io.write_deformation(f"{base}_{k + 1}{ext or '.json'}", u)
        if args.warped:
            raise InvalidArgumentError("--warped is only supported for pair registration")
        return diag
    if not (args.moving and args.fixed):
        raise InvalidArgumentError("give --moving and --fixed, or --sequence")
    moving, fixed = io.read_field(args.moving), io.read_field(args.fixed)
    _mismatch([moving, fixed], ["moving", "fixed"])
    if args.volume_mask:
        mask = (io.read_field(args.volume_mask) > 0.5).astype(np.float64)
        _mismatch([mask, fixed], ["volume-mask", "fixed"])
        u, diag = register_volume_preserving(moving, fixed, mask, params)
        log.info("volume change %.6g", diag.extra["delta_v"])
    else:
        u, diag = register_pair(moving, fixed, params)
    log.info("SAD %.6g -> %.6g", diag.extra["sad_before"], diag.extra["sad_after"])
    io.write_deformation(args.output, u)
    if args.warped:
        io.write_field(args.warped, warp(moving, u))
    return diag


def _cmd_oracle(args):
    alpha = _alpha(args, 0.3)
    if args.kind == "denoise":
        if not args.input:
            raise InvalidArgumentError("the denoise oracle needs --input")
        u = oracles.reference_denoise(io.read_field(args.input), alpha, args.fidelity)
        energy = None
    else:
        prob = BinarySegProblem(io.read_field(args.cs), io.read_field(args.ct), alpha)
        if args.kind == "mincut":
            u, energy = oracles.discrete_mincut(prob)
        else:
            u, energy = oracles.exhaustive_binary(prob.C_s, prob.C_t, alpha)
    if args.output:
        (io.write_field if args.kind == "denoise" else io.write_mask)(args.output, u)
    print(json.dumps({"oracle": args.kind, "energy": None if energy is None else float(energy)}))
    return None


COMMANDS = {
    "denoise": _cmd_denoise,
    "segment": _cmd_segment,
    "potts": _cmd_potts,
    "order": _cmd_order,
    "partial-order": _cmd_partial_order,
    "coseg": _cmd_coseg,
    "register": _cmd_register,
    "oracle": _cmd_oracle,
}


def _threads(args):
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("CMFKIT_THREADS")
        if not env:
            return None
        try:
            n = int(env)
        except ValueError:
            raise InvalidArgumentError(f"CMFKIT_THREADS must be an integer, got {env!r}")
    if n < 1:
        raise InvalidArgumentError(f"thread count must be >= 1, got {n}")
    return n


def run(argv=None):
    """Parse `argv` and run one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        n_threads = _threads(args)
        with threadpool_limits(limits=n_threads):
            diag = COMMANDS[args.command](args)
        if diag is not None and args.diagnostics:
            diag.to_csv(args.diagnostics)
    except InvalidArgumentError as exc:
        print(f"cmfkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailureError as exc:
        print(f"cmfkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"cmfkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.strict and diag is not None and not diag.converged:
        print(f"cmfkit {args.command}: did not converge in {diag.iterations} iterations",
              file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def main():
    sys.exit(run())
