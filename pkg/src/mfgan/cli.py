"""Command-line front end: run experiments, sweep hyperparameters, verify
property suites, and run the finite-difference reference solver.

Config files are plain `key = value` text (# comments allowed); keys mirror
TrainConfig plus `output_dir` and `checkpoint_stride`.  Unknown keys are
rejected.  Reports go to `report.csv` / `report.json`; the CSV header is a
frozen contract:

    iter,loss_hjb,loss_fp,loss_pen_val,loss_pen_mf,rel_err_u,rel_err_m,hbar,elapsed_s
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import discrete_game as game
from . import evaluation, networks
from .losses import LossWeights, empirical_losses
from .problems import ergodic_explicit_problem, problem_by_name
from .trainer import NonFiniteLoss, TrainConfig, train

CSV_HEADER = ("iter,loss_hjb,loss_fp,loss_pen_val,loss_pen_mf,"
              "rel_err_u,rel_err_m,hbar,elapsed_s")

_EXTRA_KEYS = {"output_dir", "checkpoint_stride"}


class ConfigError(ValueError):
    pass


def parse_config_text(text):
    """key = value lines; values are parsed as JSON when possible, else kept
    as bare strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def load_config(path):
    """Returns (TrainConfig, extras dict with output_dir/checkpoint_stride)."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    raw = parse_config_text(text)
    fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    extras = {"output_dir": ".", "checkpoint_stride": 0}
    kwargs = {}
    for key, val in raw.items():
        if key in _EXTRA_KEYS:
            extras[key] = val
        elif key in fields:
            kwargs[key] = val
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        config = TrainConfig(**kwargs)
        config.validate()
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))
    return config, extras


def _fmt(v):
    return f"{v:.12g}"


def write_csv(path, records, strict):
    lines = [CSV_HEADER]
    for r in records:
        elapsed = 0.0 if strict else r.elapsed_s
        lines.append(",".join([
            str(r.iteration), _fmt(r.loss_hjb), _fmt(r.loss_fp),
            _fmt(r.loss_pen_val), _fmt(r.loss_pen_mf),
            _fmt(r.rel_err_u), _fmt(r.rel_err_m),
            _fmt(r.hbar), _fmt(elapsed)]))
    Path(path).write_text("\n".join(lines) + "\n")


def oscillation_metric(values):
    """Standard deviation of the last 10% of a loss trace."""
    values = np.asarray(values, dtype=float)
    tail = values[-max(1, values.size // 10):]
    return float(np.std(tail))


def _write_checkpoints(outdir, config, theta, omega, hbar, tag=""):
    up = networks.NetworkParams(config.u_arch(), theta, {"hbar": float(hbar)})
    fp = networks.NetworkParams(config.f_arch(), omega)
    networks.save_params(outdir / f"value{tag}.ckpt", up)
    networks.save_params(outdir / f"density{tag}.ckpt", fp)


def run_experiment(config, extras, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stride = int(extras.get("checkpoint_stride", 0))

    def snapshot(iteration, theta, omega, hbar):
        if stride and iteration and iteration % stride == 0:
            _write_checkpoints(outdir, config, theta, omega, hbar,
                               tag=f"_{iteration:07d}")

    status = 0
    try:
        report = train(config, snapshot=snapshot)
    except NonFiniteLoss as e:
        print(f"error: {e}", file=sys.stderr)
        report = e.report
        status = 2
    if report is not None:
        write_csv(outdir / "report.csv", report.records,
                  config.strict_deterministic)
        summary = {
            "config": dataclasses.asdict(config),
            "aborted": report.aborted,
            "diagnostic": report.diagnostic,
            "hbar": report.hbar,
            "final": dataclasses.asdict(report.final()) if report.records else None,
        }
        (outdir / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
        if report.theta is not None:
            _write_checkpoints(outdir, config, report.theta, report.omega,
                               report.hbar)
    return status


def cmd_run(args):
    try:
        config, extras = load_config(args.config)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config.seed = args.seed
    outdir = args.out or extras["output_dir"]
    return run_experiment(config, extras, outdir)


_SWEEP_PARAMS = {
    "alpha_g": ("lr_g", float),
    "alpha_d": ("lr_d", float),
    "batch": ("batch", int),
}


def cmd_sweep(args):
    if not args.values:
        print("sweep error: empty value list", file=sys.stderr)
        return 1
    try:
        base, extras = load_config(args.config)
        field_name, cast = _SWEEP_PARAMS[args.parameter]
    except (ConfigError, KeyError) as e:
        print(f"sweep error: {e}", file=sys.stderr)
        return 1
    outdir = Path(args.out or extras["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in args.values:
        v = cast(value)
        config = dataclasses.replace(base)
        if field_name == "batch":
            config.batch_g = config.batch_d = v
        else:
            setattr(config, field_name, v)
        subdir = outdir / f"{args.parameter}_{value}"
        status = run_experiment(config, extras, subdir)
        if status:
            return status
        records = json.loads((subdir / "report.json").read_text())
        csv_lines = (subdir / "report.csv").read_text().strip().splitlines()[1:]
        hjb = [float(line.split(",")[1]) for line in csv_lines]
        final = records["final"]
        rows.append((value, final["rel_err_u"], final["rel_err_m"],
                     oscillation_metric(hjb)))
    lines = ["value,rel_err_u,rel_err_m,oscillation"]
    lines += [f"{v},{_fmt(a)},{_fmt(b)},{_fmt(c)}" for v, a, b, c in rows]
    (outdir / "summary.csv").write_text("\n".join(lines) + "\n")
    return 0


# -- verification suites ---------------------------------------------------


def _suite_autodiff():
    rng = np.random.default_rng(3)
    checks = []
    arch = networks.dgm_architecture(2, width=4, depth=1)
    params = networks.init_params(arch, rng)

    def net(xs):
        tape = xs[0].tape if hasattr(xs[0], "tape") else xs[0].v.tape
        g = networks.NetworkGraph(tape, arch)
        g.set_values(params.values)
        return g(xs)

    for trial in range(3):
        x = rng.random(2)
        _, _, rel = evaluation.fd_check(net, x, order="grad", h=1e-5)
        checks.append((f"network gradient vs FD (trial {trial})", rel < 1e-6, rel))
        _, _, rel = evaluation.fd_check(net, x, order="laplacian", h=1e-4)
        checks.append((f"network laplacian vs FD (trial {trial})", rel < 1e-5, rel))
    return checks


def _suite_closed_form():
    checks = []
    for d in (1, 2):
        problem = ergodic_explicit_problem(d)
        cf = problem.closed_form
        rng = np.random.default_rng(11 + d)
        x = rng.random((101, d))
        br = empirical_losses(problem, cf.u, cf.m_expr, x,
                              LossWeights(0.0, 0.0, 0.0), hbar=cf.hbar)
        ru = np.sqrt(br.l_hjb)
        rm = np.sqrt(br.l_fp)
        checks.append((f"d={d} HJB residual at closed form", ru < 1e-8, ru))
        checks.append((f"d={d} FP residual at closed form", rm < 1e-8, rm))
    return checks


def _suite_game():
    checks = []
    mu = game.empirical_measure(["a", "a", "b", "c"])
    c = game.collective_cost(mu, mu)
    err = abs(c + np.log(4.0))
    checks.append(("cost at matched measures is -ln 4", err < 1e-12, err))
    nu = game.EmpiricalMeasure(("a", "b", "c"), (0.2, 0.5, 0.3))
    gap = abs(game.collective_cost(mu, nu)
              - (-np.log(4.0) + 2.0 * game.js_divergence(mu, nu)))
    checks.append(("cost equals -ln4 + 2 JS", gap < 1e-12, gap))
    rep = game.verify_pareto_minimum(
        game.EmpiricalMeasure(("a", "b"), (0.7, 0.3)), resolution=0.02)
    checks.append(("Pareto minimizer at the target measure", rep["passed"],
                   rep["max_weight_gap"]))
    dist = game.convergence_demo({"a": 0.4, "b": 0.3, "c": 0.2, "d": 0.1},
                                 {"a": 0.25, "b": 0.25, "c": 0.25, "d": 0.25},
                                 10 ** 5, 10 ** 5, seed=0)
    checks.append(("empirical discriminator near population value",
                   dist < 0.02, dist))
    return checks


def _suite_oracle():
    problem = ergodic_explicit_problem(1)
    cf = problem.closed_form
    u, m, hbar = evaluation.fd_reference_solver_1d(problem, n=256)
    x = np.arange(256) / 256
    grid = evaluation.TorusGrid(1, 256)
    eu = evaluation.rel_l2_error(u, cf.u([x]), grid)
    em = evaluation.rel_l2_error(m, cf.m(x[:, None]), grid)
    eh = abs(hbar - cf.hbar)
    return [("FD solver matches closed-form u", eu <= 1e-3, eu),
            ("FD solver matches closed-form m", em <= 1e-3, em),
            ("FD solver matches ergodic constant", eh <= 1e-3, eh)]


_SUITES = {
    "autodiff": _suite_autodiff,
    "closed-form": _suite_closed_form,
    "game": _suite_game,
    "oracle": _suite_oracle,
}


def cmd_verify(args):
    if args.suite not in _SUITES:
        print(f"unknown suite {args.suite!r}; choices: {sorted(_SUITES)}",
              file=sys.stderr)
        return 1
    checks = _SUITES[args.suite]()
    width = max(len(name) for name, _, _ in checks)
    ok = True
    for name, passed, value in checks:
        ok &= bool(passed)
        print(f"{name:<{width}}  {'pass' if passed else 'FAIL'}  ({value:.3e})")
    return 0 if ok else 3


def cmd_fd_solve(args):
    problem = problem_by_name(args.problem, 1)
    try:
        u, m, hbar = evaluation.fd_reference_solver_1d(
            problem, n=args.n, damping=args.damping)
    except evaluation.NoConvergence as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    x = np.arange(args.n) / args.n
    lines = ["x,u,m,hbar"]
    lines += [f"{_fmt(xi)},{_fmt(ui)},{_fmt(mi)},{_fmt(hbar)}"
              for xi, ui, mi in zip(x, u, m)]
    out = Path(args.out)
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out} (Hbar = {hbar:.10g})")
    return 0


def _apply_thread_cap():
    cap = os.environ.get("MFGAN_THREADS")
    if not cap:
        return
    try:
        n = max(1, int(cap))
    except ValueError:
        print(f"ignoring malformed MFGAN_THREADS={cap!r}", file=sys.stderr)
        return
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:
        pass


def build_parser():
    p = argparse.ArgumentParser(prog="mfgan",
                                description="adversarial mean-field game solver")
    sub = p.add_subparsers(dest="command", required=True)

    pr = sub.add_parser("run", help="train from a config file")
    pr.add_argument("config")
    pr.add_argument("--out", default=None, help="output directory")
    pr.add_argument("--seed", type=int, default=None, help="override config seed")
    pr.set_defaults(fn=cmd_run)

    ps = sub.add_parser("sweep", help="run one training per parameter value")
    ps.add_argument("config")
    ps.add_argument("--parameter", required=True,
                    choices=sorted(_SWEEP_PARAMS))
    ps.add_argument("--values", nargs="*", default=[])
    ps.add_argument("--out", default=None)
    ps.set_defaults(fn=cmd_sweep)

    pv = sub.add_parser("verify", help="run a property suite")
    pv.add_argument("suite")
    pv.set_defaults(fn=cmd_verify)

    pf = sub.add_parser("fd-solve", help="finite-difference reference solve (1D)")
    pf.add_argument("--problem", default="ergodic_explicit")
    pf.add_argument("--n", type=int, default=256)
    pf.add_argument("--damping", type=float, default=0.5)
    pf.add_argument("--out", default="fd_solution.csv")
    pf.set_defaults(fn=cmd_fd_solve)
    return p


def main(argv=None):
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
