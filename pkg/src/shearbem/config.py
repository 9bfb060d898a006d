"""Flat ``key = value`` experiment configuration with ``[section]`` headers.

Grammar (one statement per line)::

    # comment                  blank lines and '#' comments are ignored
    [section]                  starts a section; keys below are section.key
    key = value                value is everything after the first '='
    key = 1, 2, 4              lists are comma separated

Keys outside any section live in section ``experiment``. Every key must
be known to the chosen experiment; unknown keys are errors so typos do not
silently fall back to defaults.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

EXPERIMENTS = ("fs-check", "quad-conv", "window-conv", "interior-validate", "exterior-colloid")

#: Keys that only affect how a run executes, not what it computes. They are
#: left out of the configuration echoed into CSV files so reruns with other
#: thread counts or output paths stay byte-identical.
EXECUTION_KEYS = ("output.dir", "run.threads")


def _powers(lo, hi):
    return ", ".join(str(2**k) for k in range(lo, hi + 1))


_COMMON = {
    "experiment.kind": "",
    "run.threads": "1",
    "run.seed": "0",
    "output.dir": "out",
    "params.tau0": "1",
    "quadrature.sigma": "0.17",
    "quadrature.nu": "2",
    "quadrature.diff_N": "7",
    "quadrature.tail_n": "24",
    "quadrature.tail_exponent": "0.5",
    "quadrature.window_c": "0.5",
    "quadrature.window_L": "auto",
    "quadrature.points_per_unit": "1",
    "quadrature.window_strength": "1",
}

DEFAULTS = {
    "fs-check": {
        "params.pe": "1",
        "params.omega": "0, 0.01, 0.1, 1",
        "study.L": _powers(2, 17),
        "study.points_per_unit": "5",
        "study.diff_N": "13",
        "study.tail_n": "64",
        "study.floor": "1e-13",
        "study.tolerance": "1e-12",
        "study.stationary_tolerance": "1e-10",
        "study.random_pairs": "0",
    },
    "window-conv": {
        "params.omega": "1",
        "study.L": _powers(2, 10),
        "study.sharp_L": _powers(2, 8),
        "study.benchmark_L": "1024",
        "study.check_L": "256",
        "study.points_per_unit": "5",
        "study.slope": "1.5",
        "study.slope_tolerance": "0.2",
        "study.windowed_tolerance": "1e-10",
        "study.oracle_tolerance": "1e-11",
    },
    "quad-conv": {
        "geometry.shape": "cube",
        "geometry.level": "3",
        "geometry.mesh_file": "",
        "params.pe": "1",
        "params.omega": "0, 1",
        "study.parts": "diff, tail",
        "study.ss_orders": "2, 2, 2, 1, 1",
        "study.tail_orders": "1, 1",
        "study.diff_plain_n": _powers(0, 6),
        "study.diff_composite_N": ", ".join(str(k) for k in range(1, 13)),
        "study.diff_benchmark_N": "13",
        "study.diff_target_points": "200",
        "study.diff_tolerance": "1e-8",
        "study.tail_exponent": "1.5",
        "study.tail_nu": "1",
        "study.tail_plain_n": _powers(0, 6),
        "study.tail_composite_N": ", ".join(str(k) for k in range(1, 9)),
        "study.tail_benchmark_N": "9",
        "study.tail_target_points": "45",
        "study.tail_tolerance_V": "1e-10",
        "study.tail_tolerance_K": "1e-7",
        "study.window_L": _powers(4, 9),
        "study.window_benchmark_L": "2048",
        "study.window_check_L": "512",
        "study.window_tolerance": "1e-12",
        "study.points_per_unit": "5",
        "study.rate_diff": "1, 3",
        "study.rate_tail": "3, 2",
        "study.rate_tolerance": "0.5",
        "study.rate_min_n": "2",
    },
    "interior-validate": {
        "geometry.shape": "cube",
        "geometry.levels": "1, 2, 3",
        "geometry.mesh_file": "",
        "params.pe": "0, 0.25, 1, 4",
        "params.omega": "0.25, 1, 4",
        "params.omega_pe": "1",
        "formulations.list": "SL-direct/P0, DL-direct/P1, SL-indirect/P0, DL-indirect/P1",
        "study.circle_points": "10",
        "study.circle_radius": "0.9",
        "study.laplace_band": "1",
    },
    "exterior-colloid": {
        "geometry.shape": "sphere",
        "geometry.levels": "1, 2, 3",
        "geometry.mesh_file": "",
        "geometry.distance": "3",
        "params.pe": "1, 4",
        "study.q12_reference": "0.26963, 0.93805",
        "study.relative_tolerance": "0.01",
        "study.eoc": "2",
        "study.eoc_tolerance": "0.4",
        "output.field_grid": "201",
        "output.field_extent": "3",
        "output.field_level": "1",
    },
}

#: Level ranges used by ``--paper-scale`` (bounded by the dense storage cap).
PAPER_SCALE = {
    "quad-conv": {"geometry.level": "4"},
    "interior-validate": {"geometry.levels": "1, 2, 3, 4"},
    "exterior-colloid": {"geometry.levels": "1, 2, 3, 4"},
}


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration files."""


_SECTION = re.compile(r"^\[([A-Za-z_][A-Za-z0-9_-]*)\]$")
_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def parse_text(text: str) -> dict[str, str]:
    """Parse config text into a flat ``{"section.key": value}`` mapping."""
    out: dict[str, str] = {}
    section = "experiment"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            section = m.group(1)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"line {lineno}: invalid key {key!r}")
        full = f"{section}.{key}"
        if full in out:
            raise ConfigError(f"line {lineno}: duplicate key {full}")
        out[full] = value
    return out


@dataclass
class ExperimentConfig:
    """Resolved configuration: experiment kind plus typed access to every key."""

    kind: str
    values: dict = field(default_factory=dict)

    @classmethod
    def from_text(cls, text: str, kind: str | None = None, overrides: dict | None = None,
                  paper_scale: bool = False) -> "ExperimentConfig":
        raw = parse_text(text)
        file_kind = raw.get("experiment.kind")
        kind = kind or file_kind
        if kind not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {kind!r}; choose one of {', '.join(EXPERIMENTS)}")
        if file_kind and file_kind != kind:
            raise ConfigError(f"config is for {file_kind!r}, not {kind!r}")
        values = {**_COMMON, **DEFAULTS[kind]}
        unknown = sorted(set(raw) - set(values))
        if unknown:
            raise ConfigError(f"unknown keys for {kind}: {', '.join(unknown)}")
        values.update(raw)
        if paper_scale:
            values.update(PAPER_SCALE.get(kind, {}))
        values.update({k: str(v) for k, v in (overrides or {}).items() if v is not None})
        values["experiment.kind"] = kind
        cfg = cls(kind, values)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, **kw) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_text(fh.read(), **kw)

    # typed access

    def get(self, key: str) -> str:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"missing key {key}") from None

    def get_list(self, key: str) -> list[str]:
        items = [s.strip() for s in self.get(key).split(",")]
        items = [s for s in items if s]
        if not items:
            raise ConfigError(f"{key} must not be empty")
        return items

    def get_float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} must be a number") from None

    def get_int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} must be an integer") from None

    def get_floats(self, key: str) -> list[float]:
        try:
            return [float(s) for s in self.get_list(key)]
        except ValueError:
            raise ConfigError(f"{key} must be a list of numbers") from None

    def get_ints(self, key: str) -> list[int]:
        try:
            return [int(s) for s in self.get_list(key)]
        except ValueError:
            raise ConfigError(f"{key} must be a list of integers") from None

    def validate(self) -> None:
        from .assembly import MAX_DENSE_DOFS

        for key, value in self.values.items():
            if key.startswith(("params.", "study.")) and not value.strip():
                raise ConfigError(f"{key} must not be empty")
        if self.get_int("run.threads") < 1:
            raise ConfigError("run.threads must be positive")
        if self.get_float("params.tau0") <= 0:
            raise ConfigError("params.tau0 must be positive")
        for key in ("params.pe", "params.omega"):
            if key in self.values and any(v < 0 for v in self.get_floats(key)):
                raise ConfigError(f"{key} must be non-negative")
        if "geometry.shape" in self.values:
            shape = self.get("geometry.shape")
            if shape not in ("cube", "sphere", "two-balls"):
                raise ConfigError(f"unknown geometry.shape {shape!r}")
            if not self.get("geometry.mesh_file"):
                per_level = {"cube": 12, "sphere": 20, "two-balls": 40}[shape]
                levels = self.get_ints("geometry.levels") if "geometry.levels" in self.values else [
                    self.get_int("geometry.level")]
                if min(levels) < 0:
                    raise ConfigError("levels must be non-negative")
                if sorted(set(levels)) != levels:
                    raise ConfigError("geometry.levels must be strictly increasing")
                if 3 * per_level * 4 ** max(levels) > MAX_DENSE_DOFS:
                    raise ConfigError(f"level {max(levels)} exceeds the dense storage cap ({MAX_DENSE_DOFS} DP1 dofs)")

    def echo(self) -> list[str]:
        """``key = value`` lines of the resolved config, without execution-only keys."""
        return [f"{k} = {self.values[k]}" for k in sorted(self.values) if k not in EXECUTION_KEYS]

    def to_text(self) -> str:
        lines, section = [], None
        for k in sorted(self.values):
            sec, key = k.split(".", 1)
            if sec != section:
                lines.append(f"[{sec}]")
                section = sec
            lines.append(f"{key} = {self.values[k]}")
        return "\n".join(lines) + "\n"
