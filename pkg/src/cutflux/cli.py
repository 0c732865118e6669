"""Command line: ``cutflux run <config>`` and ``cutflux verify <suite>``.

Exit codes: 0 success, 1 invariant failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import tomli

from .amr import MODES, AMRConfig, AMRError, run_amr
from .io import state_fields, write_convergence_csv, write_vtk
from .verify import SUITES, run_suite

EXIT_OK, EXIT_INVARIANT, EXIT_USAGE = 0, 1, 2
OUTPUT_ROOT_ENV = "CUTFEM_OUTPUT_ROOT"

# tolerances of the per-iteration invariant audit in ``run``
INVARIANT_TOLERANCES = {
    "equilibration": 1e-10,
    "conformity_uncut": 1e-10,
    "conformity_cut": 1e-10,
    "theta_residual": 1e-10,
    "decomposition": 1e-9,
    "interp_continuity": 1e-12,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    benchmark: str = "ellipse"
    mu: float | None = None
    mode: str = "eta"
    fraction: float = 0.3
    dof_cap: int | None = None
    gamma: float = 10.0
    gamma_g: float = 0.1
    order: int = 4
    error_order: int = 6
    max_iterations: int = 60
    initial_h: float | None = None
    solver: str = "auto"
    output: str | None = None
    export_vtk: str = "final"
    seed: int = 0
    workers: int | None = None

    def validate(self) -> None:
        if self.benchmark not in ("lshape", "ellipse", "sinusoidal", "patch"):
            raise ConfigError(f"benchmark: unknown value {self.benchmark!r}")
        if self.export_vtk not in ("none", "final", "all"):
            raise ConfigError(f"export_vtk: must be none, final or all, got {self.export_vtk!r}")
        if self.solver not in ("auto", "dense", "direct", "cg"):
            raise ConfigError(f"solver: unknown method {self.solver!r}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"workers: must be at least 1, got {self.workers}")
        if self.order < 2 or self.error_order < 2:
            raise ConfigError("order: quadrature orders must be at least 2")
        try:
            self.amr().validate()
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def amr(self) -> AMRConfig:
        keys = {f.name for f in fields(AMRConfig)}
        return AMRConfig(**{k: v for k, v in asdict(self).items() if k in keys})

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def run_dir(self) -> Path:
        name = self.output or f"{self.benchmark}_mu{self.mu if self.mu is not None else 'default'}_{self.mode}"
        path = Path(name)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            path = Path(root) / path
        elif not path.is_absolute():
            path = Path("runs") / path
        return path


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, value):
    t = _TYPES[key]
    if value is None:
        if "None" in t:
            return None
        raise ConfigError(f"{key}: value is required")
    if t.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if t.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if t.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    return value


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table of key/value pairs")
    if "amr" in data and isinstance(data["amr"], dict):
        data = {**{k: v for k, v in data.items() if k != "amr"}, **data["amr"]}
    unknown = sorted(set(data) - set(_TYPES))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown configuration key")
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in data.items()})
    cfg.validate()
    return cfg


def parse_config(text: str, fmt: str | None = None) -> RunConfig:
    """Parse JSON (first non-blank character ``{``) or TOML text."""
    if fmt is None:
        fmt = "json" if text.lstrip().startswith("{") else "toml"
    try:
        data = json.loads(text) if fmt == "json" else tomli.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"line {err.lineno}, column {err.colno}: {err.msg}") from None
    except tomli.TOMLDecodeError as err:
        raise ConfigError(str(err)) from None
    return config_from_dict(data)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    fmt = "json" if path.suffix == ".json" else ("toml" if path.suffix == ".toml" else None)
    return parse_config(text, fmt)


def invariant_failures(rec) -> list[str]:
    out = []
    for key, tol in INVARIANT_TOLERANCES.items():
        v = getattr(rec, key)
        if not (v <= tol):
            out.append(f"iteration {rec.iteration}: {key} = {v:.3e} exceeds {tol:.0e}")
    return out


def cmd_run(path, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        cfg = load_config(path)
    except ConfigError as e:
        print(f"error: {e}", file=err)
        return EXIT_USAGE
    run_dir = cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(cfg.dumps() + "\n")
    failures: list[str] = []

    def on_iteration(rec, state):
        failures.extend(invariant_failures(rec))
        print(f"iter {rec.iteration:3d}  N={rec.N:6d}  eta={rec.eta:.4e}  eta_gamma={rec.eta_gamma:.4e}  "
              f"error={rec.error:.4e}  eff={rec.effectivity:.3f}", file=out)
        if cfg.export_vtk == "all":
            cells, points = state_fields(state)
            write_vtk(run_dir / f"mesh_{rec.iteration:03d}.vtk", state.mesh, cells, points)

    try:
        record = run_amr(cfg.amr(), on_iteration)
    except AMRError as e:
        print(f"error: {e}", file=err)
        return EXIT_INVARIANT
    write_convergence_csv(run_dir / "convergence.csv", record.iterations)
    if cfg.export_vtk == "final" and record.final is not None:
        cells, points = state_fields(record.final)
        write_vtk(run_dir / "mesh_final.vtk", record.final.mesh, cells, points)
    n = record.column("N")
    if len(n) > 1 and not (n[1:] > n[:-1]).all():
        failures.append("N is not strictly increasing")
    print(f"wrote {run_dir / 'convergence.csv'}", file=out)
    if failures:
        for f in failures:
            print(f"invariant violated: {f}", file=err)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_verify(suite: str, seed: int = 0, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    if suite not in SUITES:
        print(f"error: unknown suite {suite!r}; choose one of {', '.join(SUITES)}", file=err)
        return EXIT_USAGE
    report = run_suite(suite, seed)
    print(json.dumps(report, indent=2), file=out)
    return EXIT_OK if report["passed"] else EXIT_INVARIANT


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cutflux", description="CutFEM with equilibrated-flux error estimation and AMR.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an adaptive computation from a JSON or TOML config")
    r.add_argument("config")
    v = sub.add_parser("verify", help="run an invariant suite and print a JSON report")
    v.add_argument("suite", help=", ".join(SUITES))
    v.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.command == "run":
        return cmd_run(args.config)
    return cmd_verify(args.suite, args.seed)


__all__ = ["RunConfig", "parse_config", "load_config", "cmd_run", "cmd_verify", "main", "MODES"]
