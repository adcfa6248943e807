"""Run configuration: strict flat key-value files with sections.

Format: ``[section]`` headers, ``key = value`` lines, ``#`` comments.
Unknown sections or keys are rejected, and validation reports every
violation at once rather than stopping at the first.  Values echoed by
``serialize`` round-trip through ``load_config`` field for field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from filmflow.anisotropy import Anisotropy
from filmflow.elasticity import ElasticTensor, Mismatch, SlabMesh
from filmflow.energy import RegularizationParams
from filmflow.evolution import EvolutionParams
from filmflow.geometry import GridProfile, GridSpec, load_profile
from filmflow.stepper import StepParams

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config_text", "serialize"]


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _to_bool(s: str) -> bool:
    if s.lower() in ("true", "yes", "1", "on"):
        return True
    if s.lower() in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_pair(s: str):
    parts = s.split()
    if len(parts) != 2:
        raise ValueError(f"expected two values, got {s!r}")
    return (float(parts[0]), float(parts[1]))


def _to_ipair(s: str):
    parts = s.split()
    if len(parts) != 2:
        raise ValueError(f"expected two integers, got {s!r}")
    return (int(parts[0]), int(parts[1]))


# (section, key) -> (converter, default or REQUIRED)
_REQUIRED = object()

_SCHEMA = {
    ("grid", "ell"): (float, 1.0),
    ("grid", "n"): (int, 32),
    ("grid", "layers"): (int, 8),
    ("physics", "anisotropy"): (str, "isotropic"),
    ("physics", "cubic_a"): (float, 0.1),
    ("physics", "facet_beta"): (float, 0.5),
    ("physics", "facet_gamma"): (float, 1.0),
    ("physics", "facet_smoothing"): (float, -1.0),  # <0 means family default
    ("physics", "lame_lambda"): (float, 1.0),
    ("physics", "lame_mu"): (float, 1.0),
    ("physics", "mismatch"): (_to_pair, (0.0, 0.0)),
    ("regularization", "epsilon"): (float, 1e-3),
    ("regularization", "p"): (float, 3.0),
    ("evolution", "tau"): (float, 1e-4),
    ("evolution", "final_time"): (float, 1e-3),
    ("evolution", "lambda0"): (float, 1.0),
    ("evolution", "c0_fraction"): (float, 0.5),
    ("evolution", "stop_on_saturation"): (_to_bool, False),
    ("evolution", "max_retries"): (int, 3),
    ("initial", "profile"): (str, "flat"),
    ("initial", "height"): (float, 0.2),
    ("initial", "amplitude"): (float, 0.02),
    ("initial", "wavevector"): (_to_ipair, (1, 0)),
    ("initial", "path"): (str, ""),
    ("experiment", "kind"): (str, "simulate"),
    ("experiment", "output_dir"): (str, "out"),
    ("experiment", "dump_every"): (int, 0),
    ("experiment", "delta"): (float, 0.01),
    ("experiment", "sigma"): (float, 0.1),
    ("experiment", "kmax"): (int, 4),
    ("experiment", "hyp1_tol"): (float, 1e-3),
    ("solver", "method"): (str, "quasi-newton"),
    ("solver", "max_outer"): (int, 200),
    ("solver", "el_tol"): (float, 1e-7),
    ("solver", "armijo_c"): (float, 1e-4),
    ("solver", "shrink"): (float, 0.5),
    ("solver", "lbfgs_memory"): (int, 10),
}

_SECTIONS = sorted({sec for sec, _ in _SCHEMA})
_KINDS = ("simulate", "stability-lyapunov", "stability-asymptotic", "check")


@dataclass(frozen=True)
class RunConfig:
    raw: dict = field(repr=False)

    def __getitem__(self, seckey):
        return self.raw[seckey]

    # -- builders --------------------------------------------------------

    def grid_spec(self) -> GridSpec:
        return GridSpec(self[("grid", "ell")], self[("grid", "n")])

    def mesh(self) -> SlabMesh:
        return SlabMesh(self.grid_spec(), self[("grid", "layers")])

    def anisotropy(self) -> Anisotropy:
        tag = self[("physics", "anisotropy")]
        if tag == "isotropic":
            return Anisotropy.isotropic()
        if tag == "cubic":
            return Anisotropy.cubic(self[("physics", "cubic_a")])
        if tag == "faceted":
            s = self[("physics", "facet_smoothing")]
            return Anisotropy.faceted(
                self[("physics", "facet_beta")],
                self[("physics", "facet_gamma")],
                None if s < 0 else s,
            )
        raise ValueError(f"unknown anisotropy family {tag!r}")

    def tensor(self) -> ElasticTensor:
        return ElasticTensor.from_lame(
            self[("physics", "lame_lambda")], self[("physics", "lame_mu")]
        )

    def mismatch(self) -> Optional[Mismatch]:
        e = self[("physics", "mismatch")]
        if e[0] == 0.0 and e[1] == 0.0:
            return None
        return Mismatch(e)

    def regularization(self) -> RegularizationParams:
        return RegularizationParams(
            epsilon=self[("regularization", "epsilon")],
            p=self[("regularization", "p")],
            tau=self[("evolution", "tau")],
            lambda0=self[("evolution", "lambda0")],
        )

    def step_params(self) -> StepParams:
        return StepParams(
            reg=self.regularization(),
            method=self[("solver", "method")],
            max_outer=self[("solver", "max_outer")],
            el_tol=self[("solver", "el_tol")],
            armijo_c=self[("solver", "armijo_c")],
            shrink=self[("solver", "shrink")],
            lbfgs_memory=self[("solver", "lbfgs_memory")],
        )

    def evolution_params(self) -> EvolutionParams:
        return EvolutionParams(
            final_time=self[("evolution", "final_time")],
            tau=self[("evolution", "tau")],
            c0_fraction=self[("evolution", "c0_fraction")],
            stop_on_saturation=self[("evolution", "stop_on_saturation")],
            max_retries=self[("evolution", "max_retries")],
        )

    def initial_profile(self) -> GridProfile:
        spec = self.grid_spec()
        kind = self[("initial", "profile")]
        d = self[("initial", "height")]
        if kind == "flat":
            return GridProfile(spec, np.full((spec.n, spec.n), d))
        if kind == "sinusoid":
            k1, k2 = self[("initial", "wavevector")]
            x1, x2 = spec.meshgrid()
            wave = np.sin(2.0 * np.pi * (k1 * x1 + k2 * x2) / spec.ell)
            return GridProfile(spec, d + self[("initial", "amplitude")] * wave)
        if kind == "file":
            return load_profile(self[("initial", "path")])
        raise ValueError(f"unknown initial profile kind {kind!r}")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse section/key/value lines; raises ConfigError with line numbers."""
    values = {}
    violations = []
    section = None
    for lineno, rawline in enumerate(text.splitlines(), start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                violations.append(f"{source}:{lineno}: unknown section [{section}]")
                section = None
            continue
        if "=" not in line:
            violations.append(f"{source}:{lineno}: expected 'key = value'")
            continue
        if section is None:
            violations.append(f"{source}:{lineno}: key outside any known section")
            continue
        key, val = (part.strip() for part in line.split("=", 1))
        if (section, key) not in _SCHEMA:
            violations.append(f"{source}:{lineno}: unknown key {section}.{key}")
            continue
        values[(section, key)] = (val, lineno)
    if violations:
        raise ConfigError(violations)
    return values


def _resolve_override_key(key: str):
    if "." in key:
        sec, k = key.split(".", 1)
        if (sec, k) in _SCHEMA:
            return (sec, k)
        raise ValueError(f"unknown config key {key!r}")
    if key == "experiment":  # shorthand for the experiment kind
        return ("experiment", "kind")
    matches = [sk for sk in _SCHEMA if sk[1] == key]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise ValueError(f"unknown config key {key!r}")
    raise ValueError(
        f"ambiguous config key {key!r}: use one of "
        + ", ".join(".".join(m) for m in matches)
    )


def _validate(raw: dict) -> list:
    """Re-validate numeric constraints of the owning modules; return all violations."""
    v = []

    def check(cond, msg):
        if not cond:
            v.append(msg)

    check(raw[("grid", "ell")] > 0, "grid.ell must be positive")
    check(raw[("grid", "n")] >= 8, "grid.n must be at least 8")
    check(raw[("grid", "layers")] >= 4, "grid.layers must be at least 4")
    check(
        raw[("physics", "anisotropy")] in ("isotropic", "cubic", "faceted"),
        "physics.anisotropy must be isotropic, cubic, or faceted",
    )
    check(raw[("physics", "lame_mu")] > 0, "physics.lame_mu must be positive")
    check(raw[("physics", "lame_lambda")] >= 0, "physics.lame_lambda must be nonnegative")
    e = raw[("physics", "mismatch")]
    check(
        e[0] >= 0 and e[1] >= 0,
        "physics.mismatch components must be nonnegative (0 0 disables elasticity)",
    )
    if raw[("physics", "anisotropy")] == "faceted":
        check(raw[("physics", "facet_beta")] > 0, "physics.facet_beta must be positive")
        check(raw[("physics", "facet_gamma")] > 0, "physics.facet_gamma must be positive")
    check(raw[("regularization", "epsilon")] > 0, "regularization.epsilon must be positive")
    check(raw[("regularization", "p")] > 2, "regularization.p must satisfy p > 2")
    check(raw[("evolution", "tau")] > 0, "evolution.tau must be positive")
    check(
        raw[("evolution", "final_time")] >= raw[("evolution", "tau")],
        "evolution.final_time must be at least one step",
    )
    check(raw[("evolution", "lambda0")] > 0, "evolution.lambda0 must be positive")
    check(
        0 < raw[("evolution", "c0_fraction")] < 1,
        "evolution.c0_fraction must lie in (0, 1)",
    )
    check(raw[("initial", "height")] > 0, "initial.height must be positive")
    check(
        raw[("initial", "profile")] in ("flat", "sinusoid", "file"),
        "initial.profile must be flat, sinusoid, or file",
    )
    check(raw[("experiment", "kind")] in _KINDS, f"experiment.kind must be one of {_KINDS}")
    check(raw[("experiment", "dump_every")] >= 0, "experiment.dump_every must be nonnegative")
    check(raw[("experiment", "delta")] >= 0, "experiment.delta must be nonnegative")
    check(raw[("experiment", "sigma")] > 0, "experiment.sigma must be positive")
    check(raw[("experiment", "kmax")] >= 1, "experiment.kmax must be at least 1")
    check(
        raw[("solver", "method")] in ("quasi-newton", "projected-gradient"),
        "solver.method must be quasi-newton or projected-gradient",
    )
    check(raw[("solver", "el_tol")] > 0, "solver.el_tol must be positive")
    check(0 < raw[("solver", "shrink")] < 1, "solver.shrink must lie in (0, 1)")
    return v


def load_config(path, overrides=()) -> RunConfig:
    """Load, override, and validate a configuration file.

    Overrides take 'section.key=value' (or a unique bare key); they beat
    the file, which beats the documented defaults.
    """
    with open(path) as f:
        text = f.read()
    parsed = parse_config_text(text, source=str(path))

    violations = []
    raw = {}
    for seckey, (conv, default) in _SCHEMA.items():
        if seckey in parsed:
            sval, lineno = parsed[seckey]
            try:
                raw[seckey] = conv(sval)
            except ValueError as exc:
                violations.append(f"{path}:{lineno}: {'.'.join(seckey)}: {exc}")
        else:
            if default is _REQUIRED:
                violations.append(f"{path}: missing required key {'.'.join(seckey)}")
            else:
                raw[seckey] = default

    for item in overrides:
        if "=" not in item:
            violations.append(f"override {item!r} is not key=value")
            continue
        key, sval = item.split("=", 1)
        try:
            seckey = _resolve_override_key(key.strip())
            conv, _ = _SCHEMA[seckey]
            raw[seckey] = conv(sval.strip())
        except ValueError as exc:
            violations.append(f"override {item!r}: {exc}")

    if violations:
        raise ConfigError(violations)
    violations = _validate(raw)
    if violations:
        raise ConfigError(violations)
    return RunConfig(raw=raw)


def serialize(config: RunConfig) -> str:
    """Emit the configuration in the same format load_config reads."""
    lines = []
    for sec in _SECTIONS:
        lines.append(f"[{sec}]")
        for (s, key), (conv, _default) in sorted(_SCHEMA.items()):
            if s != sec:
                continue
            val = config.raw[(s, key)]
            if isinstance(val, tuple):
                sval = " ".join(
                    f"{x:.17g}" if isinstance(x, float) else str(x) for x in val
                )
            elif isinstance(val, bool):
                sval = "true" if val else "false"
            elif isinstance(val, float):
                sval = f"{val:.17g}"
            else:
                sval = str(val)
            lines.append(f"{key} = {sval}")
        lines.append("")
    return "\n".join(lines)
