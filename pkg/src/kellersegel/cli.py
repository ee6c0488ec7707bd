"""Command-line driver.

Configuration files are line based, ``key = value`` with dotted keys; a
``[section]`` line prefixes the keys that follow it, so these are equivalent::

    scheme.tau = 0.01

    [scheme]
    tau = 0.01

``#`` starts a comment. Points are written ``0.5, 0.5``. Command-line
``--set key=value`` overrides file values.

Exit codes: 0 completed, 2 blow-up suspected, 3 solver failure, 4 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field

from . import diagnostics as dg
from . import harness, scheme, writers
from .femcore import P1Space
from .mesh import MeshError, build_uniform_rect_mesh

log = logging.getLogger("kellersegel")

EXIT_COMPLETED = 0
EXIT_BLOWUP = 2
EXIT_SOLVER_FAILURE = 3
EXIT_CONFIG = 4

_POINT = "point"
# key: (type, default); a default of None means "derived from other keys"
DEFAULTS = {
    "run.mode": (str, "run"),
    "domain.x_min": (float, 0.0),
    "domain.x_max": (float, 1.0),
    "domain.y_min": (float, 0.0),
    "domain.y_max": (float, 1.0),
    "mesh.nx": (int, 32),
    "mesh.ny": (int, 32),
    "scheme.tau": (float, None),
    "scheme.final_time": (float, 1.0),
    "scheme.chi": (float, 1.0),
    "scheme.alpha": (float, 1.0),
    "scheme.coupling": (float, 1.0),
    "initial.kind": (str, "gaussian"),
    "initial.value": (float, 1.0),
    "initial.center": (_POINT, None),
    "initial.width": (float, 0.1),
    "initial.mass": (float, 4.0 * math.pi),
    "newton.tol": (float, 1e-10),
    "newton.max_iter": (int, 50),
    "newton.variable": (str, "log"),
    "moment.q": (_POINT, None),
    "moment.r1": (float, None),
    "moment.r2": (float, None),
    "output.directory": (str, "ks_output"),
    "output.snapshot_every": (int, 10),
    "converge.levels": (int, 3),
    "blowup.growth_factor": (float, 50.0),
    "blowup.window": (int, 20),
    "blowup.collapse_fraction": (float, 0.99),
}
_CHOICES = {
    "run.mode": ("run", "converge", "blowup"),
    "initial.kind": ("constant", "gaussian"),
    "newton.variable": ("log", "density"),
}
_POSITIVE = {"scheme.tau", "scheme.final_time", "scheme.coupling", "initial.value",
             "initial.width", "initial.mass", "newton.tol", "newton.max_iter", "mesh.nx",
             "mesh.ny", "converge.levels", "blowup.growth_factor", "blowup.window",
             "moment.r1", "moment.r2"}
_NONNEGATIVE = {"scheme.chi", "scheme.alpha", "output.snapshot_every"}


class ConfigError(ValueError):
    def __init__(self, message, key=None, line=None):
        where = "".join([f" [{key}]" if key else "", f" (line {line})" if line else ""])
        super().__init__(f"configuration error{where}: {message}")
        self.key = key
        self.line = line


def _convert(key, raw, line=None):
    typ = DEFAULTS[key][0]
    raw = raw.strip().strip('"').strip("'")
    try:
        if raw.lower() in ("none", "") and DEFAULTS[key][1] is None:
            return None
        if typ is _POINT:
            parts = [float(p) for p in raw.strip("()[]").split(",")]
            if len(parts) != 2:
                raise ValueError("expected two comma-separated numbers")
            return tuple(parts)
        if typ is int:
            value = float(raw)
            if value != int(value):
                raise ValueError("expected an integer")
            return int(value)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {getattr(typ, '__name__', typ)}: {exc}", key, line)


@dataclass
class RunConfig:
    values: dict
    lines: dict = field(default_factory=dict)  # key -> config-file line it came from

    def __getitem__(self, key):
        return self.values[key]

    @property
    def mode(self) -> str:
        return self.values["run.mode"]

    @property
    def x_range(self):
        return self["domain.x_min"], self["domain.x_max"]

    @property
    def y_range(self):
        return self["domain.y_min"], self["domain.y_max"]

    @property
    def h(self) -> float:
        """Grid spacing ``(x_max - x_min) / nx``."""
        return (self["domain.x_max"] - self["domain.x_min"]) / self["mesh.nx"]

    @property
    def tau(self) -> float:
        tau = self["scheme.tau"]
        return self["scheme.coupling"] * self.h if tau is None else tau

    def initial_condition(self):
        if self["initial.kind"] == "constant":
            return harness.Constant(self["initial.value"])
        center = self["initial.center"]
        if center is None:
            center = (0.5 * sum(self.x_range), 0.5 * sum(self.y_range))
        return harness.Gaussian(center, self["initial.width"], self["initial.mass"])

    def initial_mass(self) -> float:
        if self["initial.kind"] == "constant":
            return self["initial.value"] * (self.x_range[1] - self.x_range[0]) * (self.y_range[1] - self.y_range[0])
        return self["initial.mass"]

    def newton_options(self) -> scheme.NewtonOptions:
        return scheme.NewtonOptions(tol=self["newton.tol"], max_iter=self["newton.max_iter"],
                                    variable=self["newton.variable"])

    def params(self) -> scheme.SchemeParams:
        return scheme.SchemeParams(chi=self["scheme.chi"], alpha=self["scheme.alpha"], tau=self.tau)

    def dump(self) -> str:
        out = []
        for key in DEFAULTS:
            v = self.values[key]
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            out.append(f"{key} = {'none' if v is None else v}")
        return "\n".join(out) + "\n"


def parse_config_text(text: str, overrides=()) -> RunConfig:
    """Parse file text plus ``key=value`` overrides into a validated config."""
    values = {k: d for k, (_, d) in DEFAULTS.items()}
    lines = {}
    section = ""
    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", line=lineno)
        key, raw = (s.strip() for s in line.split("=", 1))
        if section and "." not in key:
            key = f"{section}.{key}"
        if key not in DEFAULTS:
            raise ConfigError("unknown key", key, lineno)
        values[key] = _convert(key, raw, lineno)
        lines[key] = lineno
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError("unknown key", key)
        values[key] = _convert(key, raw)
        lines.pop(key, None)
    config = RunConfig(values, lines)
    _validate(config)
    return config


def parse_config(path=None, overrides=()) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}")
    return parse_config_text(text, overrides)


def _validate(config: RunConfig):
    v = config.values

    def fail(message, key):
        raise ConfigError(message, key, config.lines.get(key))

    for key, choices in _CHOICES.items():
        if v[key] not in choices:
            fail(f"must be one of {choices}, got {v[key]!r}", key)
    for key in _POSITIVE:
        if v[key] is not None and not v[key] > 0:
            fail(f"must be positive, got {v[key]}", key)
    for key in _NONNEGATIVE:
        if not v[key] >= 0:
            fail(f"must be nonnegative, got {v[key]}", key)
    if not v["domain.x_max"] > v["domain.x_min"]:
        fail("domain.x_max must exceed domain.x_min", "domain.x_max")
    if not v["domain.y_max"] > v["domain.y_min"]:
        fail("domain.y_max must exceed domain.y_min", "domain.y_max")
    if not 0 < v["blowup.collapse_fraction"] <= 1:
        fail("must lie in (0, 1]", "blowup.collapse_fraction")
    q = v["moment.q"] or (0.5 * sum(config.x_range), 0.5 * sum(config.y_range))
    dist = min(q[0] - v["domain.x_min"], v["domain.x_max"] - q[0],
               q[1] - v["domain.y_min"], v["domain.y_max"] - q[1])
    r1 = v["moment.r1"] if v["moment.r1"] is not None else 0.25 * dist
    r2 = v["moment.r2"] if v["moment.r2"] is not None else 0.5 * dist
    if not 0 < r1 < r2 < dist:
        fail(f"need 0 < r1 < r2 < dist(q, boundary) = {dist:g}, got r1={r1}, r2={r2}", "moment.r2")
    try:
        harness.steps_to(v["scheme.final_time"], config.tau)
    except ValueError as exc:
        fail(str(exc), "scheme.final_time")
    if config.tau > v["scheme.coupling"] * config.h * (1 + 1e-12):
        log.warning("tau=%g exceeds coupling*h=%g; the error estimate assumes tau <= C h",
                    config.tau, v["scheme.coupling"] * config.h)
    if v["scheme.chi"] > 0 and v["scheme.alpha"] > 0:
        threshold = dg.blowup_threshold(v["scheme.alpha"], v["scheme.chi"])
        if config.initial_mass() > threshold:
            log.warning("initial mass %g exceeds the critical mass 8*pi/(alpha*chi)=%g "
                        "(supercritical)", config.initial_mass(), threshold)


def _exit_for(verdict: str) -> int:
    return {dg.COMPLETED: EXIT_COMPLETED, dg.BLOWUP_SUSPECTED: EXIT_BLOWUP}.get(verdict, EXIT_SOLVER_FAILURE)


def _invariant_lines(history) -> list:
    violations = dg.energy_violations(history)
    return [
        f"max_relative_mass_drift = {dg.max_mass_drift(history):.3e}",
        f"min_u = {min(r.u_min for r in history):.6e}",
        f"positivity = {'pass' if min(r.u_min for r in history) > 0 else 'FAIL'}",
        f"energy_decay = {'pass' if not violations else 'FAIL at steps ' + str(violations)}",
    ]


def _write_summary(outdir, lines):
    with open(os.path.join(outdir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run(config: RunConfig) -> int:
    """Execute the configured mode and write its outputs; returns the exit code."""
    outdir = config["output.directory"]
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.effective"), "w") as fh:
        fh.write(config.dump())
    mesh = build_uniform_rect_mesh(config.x_range, config.y_range, config["mesh.nx"], config["mesh.ny"])

    if config.mode == "converge":
        try:
            table = harness.convergence_study(
                mesh, config.initial_condition(), config["scheme.chi"], config["scheme.alpha"],
                config["scheme.final_time"], config["converge.levels"], config["scheme.coupling"],
                config.newton_options())
        except harness.StudyError as exc:
            _write_summary(outdir, ["verdict = solver_failure", f"exit_code = {EXIT_SOLVER_FAILURE}", f"error = {exc}"])
            log.error("%s", exc)
            return EXIT_SOLVER_FAILURE
        writers.write_rates(os.path.join(outdir, "rates.csv"), table)
        _write_summary(outdir, [
            "verdict = completed", f"exit_code = {EXIT_COMPLETED}",
            f"reference_h = {table.reference_h!r}", f"reference_tau = {table.reference_tau!r}",
            f"rates_u = {table.rates_u()}", f"rates_v = {table.rates_v()}",
        ])
        return EXIT_COMPLETED

    every = config["output.snapshot_every"]

    def snapshot(rec, state):
        if every and state.k % every == 0:
            writers.write_vtk(os.path.join(outdir, f"snapshot_{state.k:06d}.vtk"), state.mesh,
                              {"u": state.u, "v": state.v}, title=f"step {state.k} t {state.t!r}")

    space = P1Space(mesh)
    moment_args = (config["moment.q"], config["moment.r1"], config["moment.r2"])
    weight = dg.build_moment_weight(mesh, *moment_args)
    state = harness.initial_state(space, config.initial_condition(), config.params(), config.newton_options())
    stop = None
    if config.mode == "blowup":
        stop = dg.collapse_stop(config["blowup.collapse_fraction"])
    n_steps = harness.steps_to(config["scheme.final_time"], config.tau)
    result = scheme.advance(state, n_steps, snapshot, weight, stop)
    verdict = dg.classify_run(result.history, result.status, config["blowup.growth_factor"],
                              config["blowup.window"])
    code = _exit_for(verdict)
    writers.write_timeseries(os.path.join(outdir, "timeseries.csv"), result.history)
    lines = [f"verdict = {verdict}", f"exit_code = {code}", f"status = {result.status}",
             f"steps = {result.state.k}", f"final_time = {result.state.t!r}"]
    if not result.completed:
        lines += [f"t_max = {result.history[-1].t!r}", f"stopped_at_step = {result.failed_step}",
                  f"message = {result.message}"]
    if verdict == dg.BLOWUP_SUSPECTED or config.mode == "blowup":
        growth = max(r.u_max for r in result.history) / result.history[0].u_max
        chi, alpha = config["scheme.chi"], config["scheme.alpha"]
        critical = dg.blowup_threshold(alpha, chi) if chi > 0 and alpha > 0 else math.inf
        lines += [f"u_max_growth = {growth:.6g}", f"critical_mass = {critical!r}",
                  f"initial_mass = {result.history[0].mass!r}"]
    lines += _invariant_lines(result.history)
    _write_summary(outdir, lines)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kellersegel", description=__doc__.split("\n\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config", nargs="?", help="configuration file (key = value)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration key; repeatable")
    p.add_argument("--mode", choices=_CHOICES["run.mode"], help="shorthand for --set run.mode=...")
    p.add_argument("--out", help="shorthand for --set output.directory=...")
    p.add_argument("--seed", type=int, help="reserved; the solver is deterministic")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    overrides = list(args.overrides)
    if args.mode:
        overrides.append(f"run.mode={args.mode}")
    if args.out:
        overrides.append(f"output.directory={args.out}")
    try:
        config = parse_config(args.config, overrides)
    except (ConfigError, MeshError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(config)
    except (ConfigError, MeshError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
