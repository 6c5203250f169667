"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
Every file written starts with a header holding the resolved config.
"""

import argparse
import csv
import dataclasses
import json
import sys
import types
import typing
from pathlib import Path

import numpy as np

from attnwalk import __version__, brownian, markov, verify
from attnwalk.attention import attention_forward, gaussian_kernel_rows
from attnwalk.errors import AttnWalkError, BadConfig, NegativeEntry, NonFiniteLoss, RowSumViolation, UnknownFunction
from attnwalk.geometry import layer_norm
from attnwalk.rng import stream
from attnwalk.trainer import TrainConfig, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class VerifyConfig:
    seed: int = 0
    perturb: str | None = None

    def __post_init__(self):
        if self.perturb is not None and self.perturb not in verify.PERTURBATIONS:
            raise BadConfig(f"perturb must be one of {verify.PERTURBATIONS}")


@dataclasses.dataclass
class KernelCheckConfig:
    seed: int = 0
    n: int = 16
    d: int = 32

    def __post_init__(self):
        if self.n < 1:
            raise BadConfig("n must be >= 1")
        if self.d < 2:
            raise BadConfig("d must be >= 2")


@dataclasses.dataclass
class WalkConfig:
    seed: int = 0
    h: float = 1.0
    tau: float = 1.0
    n_steps: int = 10_000
    n_walkers: int = 100_000
    matrix: str | None = None
    k: int = 5

    def __post_init__(self):
        if self.matrix is None and (self.n_steps < 100 or self.n_walkers < 10_000):
            raise BadConfig("diffusion check needs n_steps >= 100 and n_walkers >= 10000")
        if not (self.h > 0 and self.tau > 0) or self.k < 1 or self.n_walkers < 1:
            raise BadConfig("h, tau, k and n_walkers must be positive")


@dataclasses.dataclass
class BrownianConfig:
    seed: int = 0
    fn: str = "square"
    T: float = 1.0
    n_steps: int = 1000
    n_paths: int = 10_000

    def __post_init__(self):
        try:
            brownian.ItoFunction.parse(self.fn)
        except UnknownFunction as exc:
            raise BadConfig(str(exc)) from exc
        if not self.T > 0 or self.n_steps < 1 or self.n_paths < 2:
            raise BadConfig("need T > 0, n_steps >= 1, n_paths >= 2")


def _accepts(tp, value) -> bool:
    if typing.get_origin(tp) in (typing.Union, types.UnionType):
        return any(_accepts(t, value) for t in typing.get_args(tp))
    if tp is type(None):
        return value is None
    if tp is bool:
        return isinstance(value, bool)
    if tp is int:
        return isinstance(value, int) and not isinstance(value, bool)
    if tp is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    return isinstance(value, tp)


def resolve_config(cls, file_path: str | None, overrides: dict):
    """Defaults, then the JSON file, then command-line flags. Unknown keys are rejected."""
    values = {}
    if file_path is not None:
        try:
            loaded = json.loads(Path(file_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {file_path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})
    hints = typing.get_type_hints(cls)
    unknown = sorted(set(values) - set(hints))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in values.items():
        if not _accepts(hints[key], value):
            raise ConfigError(f"config key {key!r} has invalid value {value!r}")
    try:
        return cls(**values)
    except (BadConfig, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def header(command: str, config) -> dict:
    return {"command": command, "version": __version__, "config": dataclasses.asdict(config)}


def fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_json(path: Path, head: dict, body: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"header": head, **body}, indent=2, default=float) + "\n")


def write_csv(path: Path, head: dict, columns: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(head, default=float) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def emit(args, head: dict, name: str, body: dict) -> None:
    """Write the command's report in the chosen format and echo it on stdout."""
    out = Path(args.out)
    if args.format == "csv":
        flat = [(k, v) for k, v in body.items() if not isinstance(v, (list, dict))]
        write_csv(out / f"{name}.csv", head, ["key", "value"], flat)
    else:
        write_json(out / f"{name}.json", head, body)
    print(json.dumps(body, default=float, indent=2))


def cmd_verify(args) -> int:
    cfg = resolve_config(VerifyConfig, args.config, {"seed": args.seed, "perturb": args.perturb})
    checks = verify.run_suite(cfg.seed, cfg.perturb)
    head = header("verify", cfg)
    passed = all(c.passed for c in checks)
    out = Path(args.out)
    if args.format == "csv":
        write_csv(
            out / "verify.csv",
            head,
            ["name", "passed", "measured", "tolerance"],
            [(c.name, c.passed, c.measured, c.tolerance) for c in checks],
        )
    else:
        write_json(out / "verify.json", head, {"passed": passed, "checks": [c.as_dict() for c in checks]})
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  measured={c.measured:.3g}  tol={c.tolerance:.3g}")
    print(f"{sum(c.passed for c in checks)}/{len(checks)} checks passed")
    return EXIT_OK if passed else EXIT_FAIL


def cmd_kernel_check(args) -> int:
    cfg = resolve_config(KernelCheckConfig, args.config, {"seed": args.seed, "n": args.n, "d": args.d})
    x = layer_norm(stream(cfg.seed, 0).standard_normal((cfg.n, cfg.d)))
    diff = float(np.max(np.abs(attention_forward(x).p - gaussian_kernel_rows(x))))
    body = {"max_abs_diff": diff, "tolerance": 1e-12, "passed": diff <= 1e-12}
    emit(args, header("kernel-check", cfg), "kernel_check", body)
    return EXIT_OK if body["passed"] else EXIT_FAIL


def _load_matrix(path: str) -> np.ndarray:
    text = Path(path).read_text()
    try:
        return np.array(json.loads(text), dtype=np.float64)
    except json.JSONDecodeError:
        return np.loadtxt(path, delimiter=",", ndmin=2)


def cmd_walk(args) -> int:
    cfg = resolve_config(
        WalkConfig,
        args.config,
        {"seed": args.seed, "h": args.h, "tau": args.tau, "n_steps": args.steps, "n_walkers": args.walkers, "matrix": args.matrix, "k": args.k},
    )
    head = header("walk", cfg)
    out = Path(args.out)
    if cfg.matrix is not None:
        try:
            raw = _load_matrix(cfg.matrix)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read matrix {cfg.matrix}: {exc}") from exc
        try:
            m = markov.validate_transition(raw)
        except (RowSumViolation, NegativeEntry) as exc:
            print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        emp = markov.empirical_k_step(m, cfg.k, cfg.n_walkers, cfg.seed)
        exact = markov.k_step(m, cfg.k).m
        tol = float(1.5 / np.sqrt(cfg.n_walkers))
        err = float(np.max(np.abs(emp - exact)))
        body = {"k": cfg.k, "max_abs_error": err, "tolerance": tol, "passed": err <= tol,
                "exact": exact.tolist(), "empirical": emp.tolist()}
        emit(args, head, "walk", body)
        return EXIT_OK if body["passed"] else EXIT_FAIL

    report = markov.diffusion_limit_check(markov.DiffusionSpec(cfg.h, cfg.tau), cfg.n_steps, cfg.n_walkers, cfg.seed)
    rel_var = abs(report.empirical_variance - report.analytic_variance) / report.analytic_variance
    ks_tol = markov.ks_budget(cfg.n_steps, cfg.n_walkers)
    body = {
        **report.summary(),
        "variance_rel_error": rel_var,
        "ks_tolerance": float(ks_tol),
        "passed": bool(rel_var <= 0.05 and report.ks_statistic <= ks_tol),
    }
    write_csv(out / "walk_positions.csv", head, ["walker", "position"], enumerate(report.positions))
    write_json(out / "walk.json", head, body)
    print(json.dumps(body, indent=2))
    return EXIT_OK if body["passed"] else EXIT_FAIL


def cmd_brownian(args) -> int:
    cfg = resolve_config(
        BrownianConfig,
        args.config,
        {"seed": args.seed, "fn": args.fn, "T": args.T, "n_steps": args.steps, "n_paths": args.paths},
    )
    report = brownian.ito_check(cfg.fn, cfg.T, cfg.n_steps, cfg.n_paths, cfg.seed)
    emit(args, header("brownian", cfg), "brownian", report.as_dict())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_train(args) -> int:
    overrides = {
        "seed": args.seed, "optimizer": args.optimizer, "steps": args.steps, "eta": args.eta,
        "gamma": args.gamma, "batch_size": args.batch_size, "cg_max_iters": args.cg_max_iters,
    }
    cfg = resolve_config(TrainConfig, args.config, overrides)
    head = {**header("train", cfg), "resolved": cfg.resolved()}
    try:
        curve, _ = train(cfg)
    except NonFiniteLoss as exc:
        print(f"NonFiniteLoss: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = Path(args.out)
    columns = ["step", "loss", "grad_norm", "cg_iterations", "wall_time"]
    write_csv(out / "train_curve.csv", head, columns, (dataclasses.astuple(r) for r in curve.records))
    losses = curve.column("loss")
    summary = {
        "steps": len(curve),
        "initial_loss": float(losses[0]) if len(curve) else None,
        "final_loss": float(losses[-1]) if len(curve) else None,
        "total_cg_iterations": int(curve.column("cg_iterations").sum()) if len(curve) else 0,
    }
    write_json(out / "train_summary.json", head, summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    parser = argparse.ArgumentParser(prog="attnwalk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", parents=[common], help="run every invariant suite")
    p.add_argument("--perturb", choices=verify.PERTURBATIONS, help="inject a known fault")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("kernel-check", parents=[common], help="attention matrix vs Gaussian kernel")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.set_defaults(func=cmd_kernel_check)

    p = sub.add_parser("walk", parents=[common], help="lattice diffusion limit or Markov chain Monte Carlo")
    p.add_argument("--h", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--walkers", type=int)
    p.add_argument("--matrix", help="transition matrix as JSON or CSV; switches to k-step Monte Carlo")
    p.add_argument("--k", type=int)
    p.set_defaults(func=cmd_walk)

    p = sub.add_parser("brownian", parents=[common], help="Ito expectation check")
    p.add_argument("--fn", choices=[f.value for f in brownian.ItoFunction] + ["exp"])
    p.add_argument("--T", type=float)
    p.add_argument("--steps", type=int)
    p.add_argument("--paths", type=int)
    p.set_defaults(func=cmd_brownian)

    p = sub.add_parser("train", parents=[common], help="train the toy model")
    p.add_argument("--optimizer", choices=("sgd", "cgfac"))
    p.add_argument("--steps", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--cg-max-iters", type=int)
    p.set_defaults(func=cmd_train)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AttnWalkError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
