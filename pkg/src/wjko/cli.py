"""Command line: ``wjko run | render | oracle``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import oracle
from .config import ConfigError, ConfigFileError, load_config
from .io import FrameError, frame_to_pgm, frames_to_ppm, load_pgm_mask, read_frame
from .jko import FlowError
from .kernels import KernelError
from .domain import DomainError
from .prox import CongestionSpec, EntropySpec, prox_congestion, prox_gen_entropy, prox_identity
from .scenarios import build_scenario, run_scenario

log = logging.getLogger("wjko")

EXIT_FAILURE = 1
EXIT_INPUT = 2


def _run(args):
    cfg = load_config(args.config)
    scenario = build_scenario(cfg)
    log.info("%s: %d nodes, %d steps", cfg.scenario, scenario.domain.n, cfg.flow.steps)
    summary = run_scenario(scenario, args.out)
    print(f"wrote {len(summary.frames)} frames to {summary.out_dir}")
    return 0


def _mask_for(frame_path, explicit):
    if explicit is not None:
        return load_pgm_mask(explicit)
    sibling = Path(frame_path).with_name("mask.pgm")
    return load_pgm_mask(sibling) if sibling.is_file() else None


def _render(args):
    for f in [args.frame] + ([args.second] if args.second else []) + ([args.mask] if args.mask else []):
        if not Path(f).is_file():
            raise ConfigFileError("render", f)
    p, meta = read_frame(args.frame)
    mask = _mask_for(args.frame, args.mask)
    if args.pgm:
        frame_to_pgm(p, meta, args.pgm, mask)
    if args.ppm:
        if not args.second:
            print("error: --ppm needs --second <frame>", file=sys.stderr)
            return EXIT_INPUT
        p2, meta2 = read_frame(args.second)
        if meta2 != meta:
            raise FrameError("the two frames have different layouts")
        frames_to_ppm(p, p2, meta, args.ppm, mask)
    if not (args.pgm or args.ppm):
        print("error: nothing to do; pass --pgm and/or --ppm", file=sys.stderr)
        return EXIT_INPUT
    return 0


def _oracle(args):
    xi, q, _, gamma = oracle.random_instance(args.n, args.seed, args.gamma)
    tau = gamma if args.tau is None else args.tau
    sigma = tau / gamma
    out = {"case": args.case, "n": args.n, "seed": args.seed, "gamma": gamma, "tau": tau,
           "xi": xi.tolist(), "q": q.tolist()}
    if args.case == "jko":
        p, _, g = oracle.box_jko(xi, q, sigma, args.kappa)
        out.update(kappa=args.kappa, p=p.tolist(), dual_grad=g)
    elif args.case == "entropy":
        p, _, g = oracle.primal_jko(xi, q, sigma, m=args.m)
        out.update(m=args.m, p=p.tolist(), grad=g)
    elif args.case == "blur":
        p, _, g = oracle.primal_jko(xi, q, sigma)
        out.update(p=p.tolist(), grad=g)
    elif args.case == "dykstra":
        if args.m is not None:
            prox = prox_gen_entropy(spec=EntropySpec(1.0, args.m))
        elif args.kappa is not None:
            prox = prox_congestion(spec=CongestionSpec(args.kappa))
        else:
            prox = prox_identity()
        its = oracle.dense_dykstra(xi, q, prox, sigma, args.iterations)
        pi = its[-1][0]
        out.update(iterations=args.iterations, pi=pi.tolist(), p=pi.sum(axis=1).tolist())
    elif args.case == "attraction":
        rng = np.random.default_rng(args.seed + 1)
        r = rng.random(args.n) + 0.1
        r /= r.sum()
        cons = [oracle.Constraint([(0, "col", 1)], q), oracle.Constraint([(1, "col", 1)], r),
                oracle.Constraint([(0, "row", 1), (1, "row", -1)], np.zeros(args.n))]
        pis, g = oracle.linear_kl_oracle([xi, xi], [1.0, tau], cons)
        out.update(r=r.tolist(), p=pis[0].sum(axis=1).tolist(), dual_grad=g)
    return print(json.dumps(out, indent=1)) or 0


def build_parser():
    ap = argparse.ArgumentParser(prog="wjko", description="Entropic Wasserstein gradient flows.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-step progress")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config")
    r.add_argument("--out", required=True, help="output directory for frames and diagnostics")
    r.set_defaults(func=_run)

    v = sub.add_parser("render", help="convert frames to PGM/PPM previews")
    v.add_argument("frame")
    v.add_argument("--pgm", help="8-bit grayscale preview path")
    v.add_argument("--ppm", help="two-density color preview path (needs --second)")
    v.add_argument("--second", help="frame of the second density")
    v.add_argument("--mask", help="PGM mask for frames on masked grids (default: mask.pgm next to the frame)")
    v.set_defaults(func=_render)

    o = sub.add_parser("oracle", help="dense reference solution of a random small instance")
    o.add_argument("--case", required=True, choices=["jko", "entropy", "blur", "dykstra", "attraction"])
    o.add_argument("--n", type=int, default=4)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--gamma", type=float, default=None, help="default: a quarter of the largest cost")
    o.add_argument("--tau", type=float, default=None, help="default: gamma")
    o.add_argument("--kappa", type=float, default=None)
    o.add_argument("--m", type=float, default=None)
    o.add_argument("--iterations", type=int, default=200)
    o.set_defaults(func=_oracle)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    if args.command == "oracle":
        if args.n < 1:
            print("error: --n must be >= 1", file=sys.stderr)
            return EXIT_INPUT
        if args.case == "jko" and args.kappa is None:
            args.kappa = 0.6
        if args.case == "entropy" and args.m is None:
            args.m = 1.0
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigFileError as exc:
        print(f"error: file not found: {exc.file}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, FrameError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (FlowError, KernelError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
