"""CSV ingestion and the numeric-view preprocessing steps.

Raw job logs arrive as RFC-4180 CSV with power arrays packed into single
";"-separated fields. Preprocessing reduces arrays to scalar totals, converts
datetimes to epoch seconds, derives configured durations, imputes, and
label-encodes, leaving a fully numeric table with an empty missing mask.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import ColumnSpec, DataError, JobTable

ARRAY_SEP = ";"
_NA_TOKENS = {"", "NA", "na", "NaN", "nan", "null", "None"}


def _parse_float(token: str, row: int, name: str) -> float:
    try:
        return float(token)
    except ValueError as exc:
        raise DataError(
            f"unparseable numeric cell at row {row}, column {name!r}: {token!r}"
        ) from exc


def _parse_cell(token: str, spec: ColumnSpec, row: int):
    if token in _NA_TOKENS:
        return None
    if spec.kind == "numeric":
        return _parse_float(token, row, spec.name)
    if spec.kind == "power_array":
        parts = [p for p in token.split(ARRAY_SEP) if p != ""]
        return np.array([_parse_float(p, row, spec.name) for p in parts], dtype=float)
    # categorical / datetime / string_numeric stay as text until their pass
    return token


def load_csv(path: str | Path, specs: list[ColumnSpec]) -> JobTable:
    """Load a CSV whose header matches `specs` by name, in any column order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty CSV file: {path}") from None
        expected = [s.name for s in specs]
        missing_cols = [n for n in expected if n not in header]
        extra_cols = [n for n in header if n not in expected]
        if missing_cols or extra_cols:
            raise DataError(
                f"header mismatch in {path}: missing columns {missing_cols}, "
                f"extra columns {extra_cols}"
            )
        positions = [header.index(n) for n in expected]
        cells: list[list] = [[] for _ in specs]
        for row_i, row in enumerate(reader):
            if len(row) != len(header):
                raise DataError(
                    f"row {row_i} has {len(row)} cells, expected {len(header)}"
                )
            for j, spec in enumerate(specs):
                cells[j].append(_parse_cell(row[positions[j]], spec, row_i))
    masks = tuple(np.array([v is None for v in col], dtype=bool) for col in cells)
    return JobTable(tuple(specs), tuple(cells), masks)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, np.ndarray):
        return ARRAY_SEP.join(repr(float(v)) for v in value)
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(table: JobTable, path: str | Path) -> None:
    """Write a JobTable back to CSV; missing cells become empty fields.

    Floats are written with repr so a write/read cycle is bit-identical.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.names)
        for i in range(table.n_rows):
            writer.writerow([_format_cell(col[i]) for col in table.cells])


def reduce_power_arrays(table: JobTable) -> JobTable:
    """Replace each power_array column with per-row array sums.

    Empty arrays become missing; the column keeps its name and role but turns
    numeric.
    """
    out = table
    for spec in table.columns:
        if spec.kind != "power_array":
            continue
        col = out.column(spec.name)
        values = []
        for v in col:
            if v is None or len(v) == 0:
                values.append(None)
            else:
                values.append(float(np.sum(v)))
        out = out.replace_column(
            spec.name, ColumnSpec(spec.name, "numeric", spec.role), values
        )
    return out


def _parse_iso8601_utc(text: str, row: int, name: str) -> float:
    token = text.strip()
    if token.endswith(("Z", "z")):
        token = token[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(token)
    except ValueError as exc:
        raise DataError(
            f"unparseable timestamp at row {row}, column {name!r}: {text!r}"
        ) from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def datetimes_to_epoch(table: JobTable) -> JobTable:
    """Convert datetime columns (ISO-8601 UTC) to numeric epoch seconds."""
    out = table
    for spec in table.columns:
        if spec.kind != "datetime":
            continue
        col = out.column(spec.name)
        values = [
            None if v is None else _parse_iso8601_utc(v, i, spec.name)
            for i, v in enumerate(col)
        ]
        out = out.replace_column(
            spec.name, ColumnSpec(spec.name, "numeric", spec.role), values
        )
    return out


@dataclass
class PreprocessRecipe:
    """Fitted preprocessing state, replayable on schema-compatible tables.

    Label codes are dense, assigned in first-appearance order; unseen
    categories at replay map to max_code + 1.
    """

    derived_duration_columns: list[tuple[str, str, str]] = field(default_factory=list)
    numeric_medians: dict[str, float] = field(default_factory=dict)
    categorical_modes: dict[str, str] = field(default_factory=dict)
    label_encodings: dict[str, dict[str, int]] = field(default_factory=dict)
    imputation: tuple[str, str] = ("median_numeric", "mode_categorical")
    power_reduction: str = "sum"

    def save(self, path: str | Path) -> None:
        payload = {
            "derived_duration_columns": [list(t) for t in self.derived_duration_columns],
            "numeric_medians": self.numeric_medians,
            "categorical_modes": self.categorical_modes,
            "label_encodings": self.label_encodings,
            "imputation": list(self.imputation),
            "power_reduction": self.power_reduction,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "PreprocessRecipe":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            derived_duration_columns=[tuple(t) for t in payload["derived_duration_columns"]],
            numeric_medians=payload["numeric_medians"],
            categorical_modes=payload["categorical_modes"],
            label_encodings=payload["label_encodings"],
            imputation=tuple(payload["imputation"]),
            power_reduction=payload["power_reduction"],
        )


def derive_durations(table: JobTable, recipe: PreprocessRecipe) -> JobTable:
    """Add out_col = end - start per configured pair; negative gaps are missing."""
    out = table
    for start_col, end_col, out_col in recipe.derived_duration_columns:
        for ref in (start_col, end_col):
            if ref not in out.names:
                raise DataError(f"duration source column {ref!r} not in table")
        starts = out.column(start_col)
        ends = out.column(end_col)
        values = []
        for s, e in zip(starts, ends):
            if s is None or e is None:
                values.append(None)
            else:
                d = float(e) - float(s)
                values.append(d if d >= 0 else None)
        out = out.add_column(ColumnSpec(out_col, "numeric", "feature"), values)
    return out


def _mode(values: list) -> str:
    counts: dict[str, int] = {}
    order: list[str] = []
    for v in values:
        if v not in counts:
            order.append(v)
            counts[v] = 0
        counts[v] += 1
    best = max(counts.values())
    for v in order:  # first-appearance tie break
        if counts[v] == best:
            return v
    raise AssertionError("unreachable")


def fit_apply_recipe(
    table: JobTable,
    duration_pairs: list[tuple[str, str, str]] | None = None,
) -> tuple[JobTable, PreprocessRecipe]:
    """Fit imputation values and label encodings on `table` and apply them.

    Expects array reduction and datetime conversion to have run already.
    Ignored-role columns are dropped here (explicitly, by role). The returned
    table is fully numeric with an all-false missing mask.
    """
    recipe = PreprocessRecipe(derived_duration_columns=list(duration_pairs or []))
    out = table.drop_columns([c.name for c in table.columns if c.role == "ignored"])

    for spec in list(out.columns):
        col = out.column(spec.name)
        mask = out.mask(spec.name)
        if spec.kind == "string_numeric":
            col = [
                None if v is None else _parse_float(str(v), i, spec.name)
                for i, v in enumerate(col)
            ]
            spec = ColumnSpec(spec.name, "numeric", spec.role)
            out = out.replace_column(spec.name, spec, col)
        if spec.kind == "numeric":
            present = [float(v) for v in col if v is not None]
            if not present:
                raise DataError(f"column {spec.name!r} is entirely missing; cannot impute")
            median = float(np.median(present))
            recipe.numeric_medians[spec.name] = median
            if mask.any():
                col = [median if v is None else float(v) for v in col]
                out = out.replace_column(spec.name, spec, col)
        elif spec.kind == "categorical":
            present = [v for v in col if v is not None]
            if not present:
                raise DataError(f"column {spec.name!r} is entirely missing; cannot impute")
            mode = _mode(present)
            recipe.categorical_modes[spec.name] = mode
            filled = [mode if v is None else v for v in col]
            codes: dict[str, int] = {}
            for v in filled:
                if v not in codes:
                    codes[v] = len(codes)
            recipe.label_encodings[spec.name] = codes
            encoded = [float(codes[v]) for v in filled]
            out = out.replace_column(
                spec.name, ColumnSpec(spec.name, "numeric", spec.role), encoded
            )
        elif spec.kind in ("datetime", "power_array"):
            raise DataError(
                f"column {spec.name!r} still has kind {spec.kind}; run array "
                "reduction and datetime conversion first"
            )
    return out, recipe


def apply_recipe(table: JobTable, recipe: PreprocessRecipe) -> JobTable:
    """Replay a fitted recipe on a schema-compatible table.

    Idempotent: a table that is already fully numeric passes through unchanged.
    Unseen categories map to the reserved code max_code + 1.
    """
    out = table.drop_columns([c.name for c in table.columns if c.role == "ignored"])
    for spec in list(out.columns):
        col = out.column(spec.name)
        if spec.kind == "string_numeric":
            col = [
                None if v is None else _parse_float(str(v), i, spec.name)
                for i, v in enumerate(col)
            ]
            spec = ColumnSpec(spec.name, "numeric", spec.role)
            out = out.replace_column(spec.name, spec, col)
        if spec.kind == "numeric":
            if spec.name in recipe.numeric_medians and out.mask(spec.name).any():
                median = recipe.numeric_medians[spec.name]
                col = [median if v is None else float(v) for v in col]
                out = out.replace_column(spec.name, spec, col)
        elif spec.kind == "categorical":
            codes = recipe.label_encodings.get(spec.name)
            if codes is None:
                raise DataError(f"recipe has no encoding for column {spec.name!r}")
            unseen = max(codes.values()) + 1 if codes else 0
            mode = recipe.categorical_modes.get(spec.name)
            filled = [mode if v is None else v for v in col]
            encoded = [float(codes.get(v, unseen)) for v in filled]
            out = out.replace_column(
                spec.name, ColumnSpec(spec.name, "numeric", spec.role), encoded
            )
    return out


def preprocess_fit(
    table: JobTable, duration_pairs: list[tuple[str, str, str]] | None = None
) -> tuple[JobTable, PreprocessRecipe]:
    """Full numeric-view pass: arrays -> epochs -> durations -> impute/encode."""
    out = reduce_power_arrays(table)
    out = datetimes_to_epoch(out)
    stage = PreprocessRecipe(derived_duration_columns=list(duration_pairs or []))
    out = derive_durations(out, stage)
    out, recipe = fit_apply_recipe(out, duration_pairs=stage.derived_duration_columns)
    return out, recipe


def preprocess_apply(table: JobTable, recipe: PreprocessRecipe) -> JobTable:
    out = reduce_power_arrays(table)
    out = datetimes_to_epoch(out)
    out = derive_durations(out, recipe)
    return apply_recipe(out, recipe)


def save_specs(specs, path: str | Path) -> None:
    payload = [{"name": s.name, "kind": s.kind, "role": s.role} for s in specs]
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def load_specs(path: str | Path) -> list[ColumnSpec]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [ColumnSpec(d["name"], d["kind"], d["role"]) for d in payload]


def _schema_sidecar(csv_path: Path) -> Path:
    return csv_path.with_suffix(csv_path.suffix + ".schema.json")


def write_table(table: JobTable, path: str | Path) -> list[Path]:
    """Write a CSV plus a schema sidecar so the table can be reloaded as-is."""
    path = Path(path)
    write_csv(table, path)
    sidecar = _schema_sidecar(path)
    save_specs(table.columns, sidecar)
    return [path, sidecar]


def read_table(path: str | Path, specs: list[ColumnSpec] | None = None) -> JobTable:
    """Load a CSV using explicit specs or the schema sidecar written next to it."""
    path = Path(path)
    if specs is None:
        sidecar = _schema_sidecar(path)
        if not sidecar.exists():
            raise DataError(f"no column specs given and no schema sidecar at {sidecar}")
        specs = load_specs(sidecar)
    return load_csv(path, specs)
