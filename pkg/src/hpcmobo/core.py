"""Shared domain types: tables, columns, objective points, run configuration."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np


class PipelineError(Exception):
    """Base class for pipeline failures; `exit_code` drives the CLI."""

    exit_code = 1


class ConfigError(PipelineError):
    exit_code = 2


class DataError(PipelineError):
    exit_code = 3


class NumericalError(PipelineError):
    exit_code = 4


COLUMN_KINDS = ("numeric", "categorical", "datetime", "power_array", "string_numeric")
COLUMN_ROLES = (
    "feature",
    "regression_target",
    "classification_target",
    "design_variable",
    "ignored",
)


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    role: str = "feature"

    def __post_init__(self) -> None:
        if self.kind not in COLUMN_KINDS:
            raise ConfigError(f"unknown column kind {self.kind!r} for column {self.name!r}")
        if self.role not in COLUMN_ROLES:
            raise ConfigError(f"unknown column role {self.role!r} for column {self.name!r}")


@dataclass(frozen=True)
class JobTable:
    """Rectangular job-log table, column major. Missing cells hold None.

    Transforms never mutate in place; they return new tables. `missing` mirrors
    the None placements so the mask survives serialization round trips.
    """

    columns: tuple[ColumnSpec, ...]
    cells: tuple[list, ...]
    missing: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        if len(self.columns) != len(self.cells) or len(self.columns) != len(self.missing):
            raise DataError("column specs, cells, and missing masks must align")
        n = self.n_rows
        for spec, col, mask in zip(self.columns, self.cells, self.missing):
            if len(col) != n or len(mask) != n:
                raise DataError(f"column {spec.name!r} has ragged length")

    @property
    def n_rows(self) -> int:
        return len(self.cells[0]) if self.cells else 0

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def index(self, name: str) -> int:
        for j, c in enumerate(self.columns):
            if c.name == name:
                return j
        raise DataError(f"no column named {name!r}")

    def spec(self, name: str) -> ColumnSpec:
        return self.columns[self.index(name)]

    def column(self, name: str) -> list:
        return self.cells[self.index(name)]

    def mask(self, name: str) -> np.ndarray:
        return self.missing[self.index(name)]

    def columns_with_role(self, *roles: str) -> list[ColumnSpec]:
        return [c for c in self.columns if c.role in roles]

    def design_column(self) -> ColumnSpec:
        designs = self.columns_with_role("design_variable")
        if len(designs) != 1:
            raise ConfigError(
                f"exactly one design_variable column required, found {len(designs)}"
            )
        return designs[0]

    def numeric_matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack named numeric columns into an (n, k) float matrix. Missing cells
        become NaN."""
        cols = []
        for name in names:
            j = self.index(name)
            vals = [v if v is not None else math.nan for v in self.cells[j]]
            cols.append(np.asarray(vals, dtype=float))
        if not cols:
            return np.empty((self.n_rows, 0))
        return np.column_stack(cols)

    def replace_column(self, name: str, spec: ColumnSpec, values: list,
                       missing: np.ndarray | None = None) -> "JobTable":
        j = self.index(name)
        cells = list(self.cells)
        cols = list(self.columns)
        masks = list(self.missing)
        cols[j] = spec
        cells[j] = values
        masks[j] = _mask_for(values) if missing is None else np.asarray(missing, dtype=bool)
        return JobTable(tuple(cols), tuple(cells), tuple(masks))

    def add_column(self, spec: ColumnSpec, values: list,
                   missing: np.ndarray | None = None) -> "JobTable":
        if spec.name in self.names:
            raise DataError(f"column {spec.name!r} already present")
        mask = _mask_for(values) if missing is None else np.asarray(missing, dtype=bool)
        return JobTable(
            self.columns + (spec,), self.cells + (values,), self.missing + (mask,)
        )

    def drop_columns(self, names: Iterable[str]) -> "JobTable":
        drop = set(names)
        keep = [j for j, c in enumerate(self.columns) if c.name not in drop]
        return JobTable(
            tuple(self.columns[j] for j in keep),
            tuple(self.cells[j] for j in keep),
            tuple(self.missing[j] for j in keep),
        )

    def select_rows(self, keep: np.ndarray) -> "JobTable":
        keep = np.asarray(keep)
        if keep.dtype == bool:
            idx = np.flatnonzero(keep)
        else:
            idx = keep.astype(int)
        cells = tuple([col[i] for i in idx] for col in self.cells)
        masks = tuple(m[idx] for m in self.missing)
        return JobTable(self.columns, cells, masks)


def _mask_for(values: list) -> np.ndarray:
    return np.array([v is None for v in values], dtype=bool)


def build_table(columns: Sequence[ColumnSpec], data: Mapping[str, list]) -> JobTable:
    """Assemble a JobTable from per-column value lists; None marks missing."""
    cells = []
    masks = []
    for spec in columns:
        if spec.name not in data:
            raise DataError(f"no data supplied for column {spec.name!r}")
        col = list(data[spec.name])
        cells.append(col)
        masks.append(_mask_for(col))
    return JobTable(tuple(columns), tuple(cells), tuple(masks))


def tables_equal(a: JobTable, b: JobTable) -> bool:
    """Cell-for-cell equality, including the missing mask."""
    if a.columns != b.columns or a.n_rows != b.n_rows:
        return False
    for col_a, col_b, m_a, m_b in zip(a.cells, b.cells, a.missing, b.missing):
        if not np.array_equal(m_a, m_b):
            return False
        for va, vb in zip(col_a, col_b):
            if isinstance(va, np.ndarray) or isinstance(vb, np.ndarray):
                if not np.array_equal(np.asarray(va), np.asarray(vb)):
                    return False
            elif va != vb and not (va is None and vb is None):
                return False
    return True


@dataclass(frozen=True)
class ObjectiveSample:
    """One evaluated design point in minimization space."""

    node_count: int
    context: np.ndarray
    runtime: float
    power: float

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise DataError(f"node_count must be a positive integer, got {self.node_count}")
        if not (math.isfinite(self.runtime) and math.isfinite(self.power)):
            raise NumericalError(
                f"objective values must be finite, got ({self.runtime}, {self.power})"
            )

    @property
    def y(self) -> tuple[float, float]:
        return (self.runtime, self.power)


@dataclass(frozen=True)
class RunConfig:
    """Optimizer and sampler budget knobs, overridable from config file and CLI."""

    mobo_iterations: int = 300
    q: int = 1
    mc_samples: int = 128
    acq_restarts: int = 5
    raw_candidates: int = 32
    random_seeds: int = 5
    sampling_fraction: float = 1.0
    p_min: float = 0.01
    seed: int = 0


def validate_config(cfg: RunConfig) -> RunConfig:
    """Return cfg unchanged if valid; raise ConfigError naming the first bad field."""
    if cfg.mobo_iterations < 1:
        raise ConfigError(f"mobo_iterations must be >= 1, got {cfg.mobo_iterations}")
    if cfg.q != 1:
        raise ConfigError(f"q is fixed at 1, got {cfg.q}")
    if cfg.mc_samples < 1:
        raise ConfigError(f"mc_samples must be >= 1, got {cfg.mc_samples}")
    if cfg.acq_restarts < 1:
        raise ConfigError(f"acq_restarts must be >= 1, got {cfg.acq_restarts}")
    if cfg.raw_candidates < 1:
        raise ConfigError(f"raw_candidates must be >= 1, got {cfg.raw_candidates}")
    if cfg.random_seeds < 1:
        raise ConfigError(f"random_seeds must be >= 1, got {cfg.random_seeds}")
    if cfg.sampling_fraction <= 0:
        raise ConfigError(
            f"sampling fraction must be positive (sampling_fraction={cfg.sampling_fraction})"
        )
    if cfg.sampling_fraction > 1:
        raise ConfigError(
            f"sampling_fraction must be <= 1, got {cfg.sampling_fraction}"
        )
    if not (0 < cfg.p_min <= 1):
        raise ConfigError(f"p_min must be in (0, 1], got {cfg.p_min}")
    return cfg


_RUN_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def parse_config_text(text: str) -> dict[str, dict[str, str]]:
    """Parse a `key = value` config file with optional [section] headers.

    Keys before any header land in the "" section. Lines starting with # or ;
    are comments.
    """
    sections: dict[str, dict[str, str]] = {"": {}}
    current = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            sections.setdefault(current, {})
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not `key = value`: {raw!r}")
        key, value = line.split("=", 1)
        sections[current][key.strip()] = value.strip()
    return sections


def load_config_file(path: str | Path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _coerce(name: str, value: str):
    kind = _RUN_FIELD_TYPES[name]
    try:
        if kind in ("int", int):
            return int(value)
        if kind in ("float", float):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"config field {name}={value!r} is not a valid {kind}") from exc
    return value


def run_config_from_sections(sections: Mapping[str, Mapping[str, str]],
                             overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Build a RunConfig from parsed config sections plus CLI overrides.

    Fields are read from the [run] section, falling back to top-level keys.
    `tau` is accepted as an alias for sampling_fraction.
    """
    merged: dict[str, Any] = {}
    for scope in ("", "run"):
        for key, value in sections.get(scope, {}).items():
            name = "sampling_fraction" if key == "tau" else key
            if name in _RUN_FIELD_TYPES:
                merged[name] = _coerce(name, value)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in _RUN_FIELD_TYPES:
            raise ConfigError(f"unknown run config field {key!r}")
        merged[key] = value
    return validate_config(RunConfig(**merged))


@dataclass(frozen=True)
class StageTimings:
    """Ordered stage -> wall-clock seconds map with a consistency-checked total."""

    entries: tuple[tuple[str, float], ...]
    total: float

    @classmethod
    def from_entries(cls, entries: Sequence[tuple[str, float]]) -> "StageTimings":
        total = float(sum(t for _, t in entries))
        return cls(tuple((str(k), float(v)) for k, v in entries), total)

    def __post_init__(self) -> None:
        s = sum(t for _, t in self.entries)
        scale = max(abs(s), abs(self.total), 1e-12)
        if abs(s - self.total) > 1e-6 * scale:
            raise NumericalError(
                f"stage timing total {self.total} != sum of entries {s}"
            )

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)
