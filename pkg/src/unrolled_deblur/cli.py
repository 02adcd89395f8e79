"""Command-line interface: ``unrolled-deblur {synth,svr,train,restore,gradcheck}``.

Every command writes its resolved settings as ``key = value`` lines next to
its outputs.  The same format is accepted by ``--config``; flags given on the
command line override values from the file.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .dataset import SynthSpec, build_svr_dataset, read_corpus, write_corpus
from .energy import EnergyParams, lipschitz_estimate
from .errors import InvalidInputError, InvalidParameterError, NumericFailureError
from .learn import (GROUPS, LearnConfig, default_init, learn_params, load_params, loss_and_grad,
                    loss_only, make_merit, save_params)
from .pgm import read_pgm, write_pgm
from .svr import (DEFAULT_C, DEFAULT_EPS_TUBE, SvrTrainSet, kkt_residuals, load_model, save_model,
                  svr_predict, svr_train)
from .unroll import restore

log = logging.getLogger("unrolled_deblur")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
RESTORED_SUFFIX = "_restored"
GRADCHECK_TOL = 1e-4
GRADCHECK_TOL_R = 1e-3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ----------------------------------------------------------------- config files

def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise InvalidInputError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def write_config(path, args: argparse.Namespace) -> None:
    items = sorted((k, v) for k, v in vars(args).items() if k not in ("func", "config"))
    lines = []
    for k, v in items:
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{k} = {'' if v is None else v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _csv_groups(text: str) -> tuple:
    names = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [n for n in names if n not in GROUPS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown groups {bad}; choose from {GROUPS}")
    return names


# --------------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    spec = SynthSpec(height=args.size, width=args.size, radius=args.radius,
                     noise_std=args.noise, seed=args.seed)
    spec.validate()
    if args.n < 1:
        raise InvalidParameterError("--n must be at least 1")
    out = Path(args.out)
    rows = write_corpus(out, args.n, spec)
    write_config(out / "run_config.txt", args)
    mean = np.mean([float(r["score"]) for r in rows])
    print(f"wrote {len(rows)} pairs to {out} (mean observation score {mean:.1f})")
    return EXIT_OK


def cmd_svr_train(args) -> int:
    base = SynthSpec(height=args.size, width=args.size, radius=args.radius,
                     noise_std=args.noise, seed=args.seed)
    ts, images = build_svr_dataset(base, per_decile=args.per_decile, seed=args.seed,
                                   downsample=args.downsample, budget=args.budget,
                                   return_images=True)
    model = svr_train(ts, C=args.C, eps_tube=args.eps_tube, sigma=args.sigma, keep_all=False)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    write_config(out.with_name(out.name + ".config"), args)
    kkt = kkt_residuals(svr_train(ts, C=args.C, eps_tube=args.eps_tube, sigma=model.sigma,
                                  keep_all=True), ts)
    print(f"trained on {len(ts)} samples, {len(model.coef)} support vectors, "
          f"sigma {model.sigma:.4g}, bias {model.bias:.4g}")
    for k, v in kkt.items():
        print(f"  kkt {k:<16} {v:.3e}")
    return EXIT_OK


def cmd_svr_predict(args) -> int:
    model = load_model(args.svr_model)
    for path in args.images:
        print(f"{path}\t{svr_predict(model, read_pgm(path)):.4f}")
    return EXIT_OK


def _trainset(args, need_truth: bool):
    items = read_corpus(args.corpus)
    if len(items) < args.n_train:
        raise InvalidInputError(f"{args.corpus}: {len(items)} samples, need {args.n_train}")
    return [(obs, gt if need_truth else None) for obs, gt, _ in items[:args.n_train]]


def cmd_train(args) -> int:
    if args.loss == "svr" and not args.svr_model:
        raise InvalidInputError("--loss svr requires --svr-model")
    model = load_model(args.svr_model) if args.loss == "svr" else None
    samples = _trainset(args, args.loss == "ssim")
    if args.init_r is None:
        p0, a0 = default_init(samples, args.K, merit=make_merit(args.loss, model))
    else:
        p0 = EnergyParams(args.init_r, 0.01, 0.01, 0.01)
        a0 = (1.0 / lipschitz_estimate(p0.gamma, p0.delta),) * args.K
    cfg = LearnConfig(max_outer_iters=args.max_iter, rel_tol=args.rel_tol, free=args.free)
    t0 = time.perf_counter()
    res = learn_params(samples, (p0, a0), cfg, args.loss, svr_model=model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_params(out, res.theta_star, res.alpha_star, cfg.eps)
    write_config(out.with_name(out.name + ".config"), args)
    hist = ", ".join(f"{v:.6g}" for v in res.loss_history)
    log.info("training took %.1f s", time.perf_counter() - t0)
    print(f"loss history: {hist}")
    print(f"stopped: {res.stop_reason}; {res.theta_star}")
    return EXIT_OK


def _inputs(paths) -> list[Path]:
    files = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.pgm")))
        elif p.exists():
            files.append(p)
        else:
            raise InvalidInputError(f"no such input: {p}")
    if not files:
        raise InvalidInputError("no input images")
    return files


def cmd_restore(args) -> int:
    p, ucfg = load_params(args.params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in _inputs(args.inputs):
        t0 = time.perf_counter()
        u = restore(read_pgm(path), p, ucfg)
        target = out / f"{path.stem}{RESTORED_SUFFIX}.pgm"
        write_pgm(target, u)
        log.info("%s restored in %.2f s", path.name, time.perf_counter() - t0)
        print(target)
    write_config(out / "run_config.txt", args)
    return EXIT_OK


# -------------------------------------------------------------------- gradcheck

def _gradcheck_instance(seed: int, size: int, K: int, loss: str):
    rng = np.random.default_rng([seed, 11])
    g = (rng.random((size, size)) < 0.3).astype(float)
    f = np.clip(g + 0.1 * rng.standard_normal(g.shape), 0, 1)
    p = EnergyParams(r=rng.uniform(1.0, 2.5), rho=rng.uniform(0.0, 0.2),
                     gamma=rng.uniform(0.005, 0.05), delta=rng.uniform(0.1, 0.5))
    alpha = tuple(rng.uniform(0.3, 1.0, K))
    model = None
    if loss == "svr":
        imgs = [g, f, np.zeros_like(g)] + [np.clip(g + s * rng.standard_normal(g.shape), 0, 1)
                                          for s in (0.1, 0.2, 0.3)]
        ts = SvrTrainSet.from_images(imgs, rng.uniform(0, 100, len(imgs)))
        model = svr_train(ts, C=DEFAULT_C, eps_tube=DEFAULT_EPS_TUBE)
    return f, g, p, alpha, make_merit(loss, model)


def gradient_check(seed: int = 0, size: int = 12, K: int = 5, loss: str = "ssim",
                   flip_sign: bool = False) -> list[tuple[str, float, float, float]]:
    """Analytic vs central-difference gradient rows ``(name, analytic, fd, rel_err)``.

    Steps are ``1e-5`` relative.  The PSF radius derivative inside the
    analytic gradient is itself a difference quotient, so the radius entry
    agrees only to the accuracy of that quotient.
    """
    f, g, p, alpha, merit = _gradcheck_instance(seed, size, K, loss)
    _, gt, ga = loss_and_grad(f, g, p, alpha, merit)
    analytic = np.concatenate([gt, ga]) * (-1.0 if flip_sign else 1.0)
    x0 = np.concatenate([p.as_array(), alpha])

    def value(x):
        return loss_only(f, g, EnergyParams.from_array(x[:4]), tuple(x[4:]), merit)

    def central(i, h):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += h
        xm[i] -= h
        return (value(xp) - value(xm)) / (2 * h)

    rows = []
    names = ["r", "rho", "gamma", "delta"] + [f"alpha[{k}]" for k in range(K)]
    for i, name in enumerate(names):
        h = 1e-5 * abs(x0[i]) if x0[i] != 0 else 1e-8
        fd = central(i, h)
        a = analytic[i]
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-7)
        rows.append((name, float(a), float(fd), float(rel)))
    return rows


def gradcheck_tolerance(name: str) -> float:
    # the radius entry carries the error of the PSF difference quotient
    return GRADCHECK_TOL_R if name == "r" else GRADCHECK_TOL


def cmd_gradcheck(args) -> int:
    rows = gradient_check(args.seed, args.size, args.K, args.loss, flip_sign=args.inject_fault)
    print(f"{'component':<12}{'analytic':>16}{'finite diff':>16}{'rel err':>12}{'tol':>8}")
    failed = []
    for name, a, fd, rel in rows:
        tol = gradcheck_tolerance(name)
        if not rel < tol:
            failed.append(name)
        print(f"{name:<12}{a:>16.8e}{fd:>16.8e}{rel:>12.2e}{tol:>8.0e}")
    worst = max(r[3] for r in rows if r[0] != "r")
    print(f"max relative error {worst:.3e} excluding r, r {rows[0][3]:.3e}: "
          + ("ok" if not failed else "FAIL in " + ", ".join(failed)))
    return EXIT_NUMERIC if failed else EXIT_OK


# ----------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value file with defaults for this command")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("-v", "--verbose", action="store_true")

    synth_opts = _Parser(add_help=False)
    synth_opts.add_argument("--radius", type=float, default=3.0)
    synth_opts.add_argument("--noise", type=float, default=0.01)
    synth_opts.add_argument("--size", type=int, default=128)

    parser = _Parser(prog="unrolled-deblur", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common, synth_opts], help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("svr", help="train or apply the quality predictor")
    svr_sub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    q = svr_sub.add_parser("train", parents=[common, synth_opts])
    q.add_argument("--out", required=True, help="model file")
    q.add_argument("--per-decile", type=int, default=12)
    q.add_argument("--budget", type=int, default=600)
    q.add_argument("--downsample", type=int, default=2)
    q.add_argument("--C", type=float, default=DEFAULT_C)
    q.add_argument("--eps-tube", type=float, default=DEFAULT_EPS_TUBE)
    q.add_argument("--sigma", type=float, default=None)
    q.set_defaults(func=cmd_svr_train)
    q = svr_sub.add_parser("predict", parents=[common])
    q.add_argument("--svr-model", required=True)
    q.add_argument("images", nargs="+")
    q.set_defaults(func=cmd_svr_predict)

    p = sub.add_parser("train", parents=[common], help="learn energy parameters and steplengths")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="parameter file")
    p.add_argument("--K", type=int, default=60)
    p.add_argument("--loss", choices=("ssim", "svr"), default="ssim")
    p.add_argument("--svr-model")
    p.add_argument("--n-train", type=int, default=4)
    p.add_argument("--init-r", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--rel-tol", type=float, default=1e-7)
    p.add_argument("--free", type=_csv_groups, default=GROUPS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("restore", parents=[common], help="apply learned parameters")
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("inputs", nargs="+", help="PGM files or directories")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("gradcheck", parents=[common], help="compare gradients with finite differences")
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--size", type=int, default=12)
    p.add_argument("--loss", choices=("ssim", "svr"), default="ssim")
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _find_subparser(parser, argv):
    # walk nested sub-commands to the parser that owns the final options
    node = parser
    for tok in argv:
        acts = [a for a in node._actions if isinstance(a, argparse._SubParsersAction)]
        if not acts or tok not in acts[0].choices:
            if tok.startswith("-"):
                continue
            break
        node = acts[0].choices[tok]
    return node


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        values = read_config(known.config)
        # recorded configs name the command itself; empty values mean "unset"
        values = {k: (v if v != "" else None) for k, v in values.items()
                  if k not in ("command", "action")}
        target = _find_subparser(parser, argv)
        dests = {a.dest for a in target._actions}
        unknown = sorted(set(values) - dests)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        for action in target._actions:
            if isinstance(action, argparse._StoreTrueAction) and action.dest in values:
                values[action.dest] = str(values[action.dest]).lower() in ("1", "true", "yes")
        # string defaults are converted by argparse like command-line values
        target.set_defaults(**values)
        for action in target._actions:
            if action.dest in values and action.required:
                action.required = False
    args = parser.parse_args(argv)
    missing = [k for k in ("out", "corpus", "params") if hasattr(args, k) and getattr(args, k) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m for m in missing)}")
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidInputError, InvalidParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
