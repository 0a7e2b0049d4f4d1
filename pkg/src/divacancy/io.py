"""Measurement tables: CSV ingestion with unit normalisation and emission.

Headers carry units in parentheses, e.g. ``frequency(THz)``. On load every
quantity is converted to the package conventions (GHz/THz for optical and
spin frequencies, MHz for couplings and widths, ns/us for times, G, mW, K).
Optional leading ``# key = value`` lines hold source metadata.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import SPEED_OF_LIGHT


class TableError(ValueError):
    """A table failed schema or value validation."""


def _scale(k):
    return lambda x: x * k


def _nm_to_thz(x):
    with np.errstate(divide="ignore"):
        return SPEED_OF_LIGHT / (np.asarray(x, dtype=float) * 1e-9) / 1e12


_FREQ_THZ = {"THz": _scale(1.0), "GHz": _scale(1e-3), "nm": _nm_to_thz}
_FREQ_GHZ = {"GHz": _scale(1.0), "MHz": _scale(1e-3), "THz": _scale(1e3)}
_MHZ = {"MHz": _scale(1.0), "kHz": _scale(1e-3), "GHz": _scale(1e3)}
_KHZ = {"kHz": _scale(1.0), "Hz": _scale(1e-3), "MHz": _scale(1e3)}
_NS = {"ns": _scale(1.0), "ps": _scale(1e-3), "us": _scale(1e3)}
_US = {"us": _scale(1.0), "ns": _scale(1e-3), "ms": _scale(1e3)}
_GAUSS = {"G": _scale(1.0), "mT": _scale(10.0), "T": _scale(1e4)}
_DEG = {"deg": _scale(1.0), "rad": np.rad2deg}
_MW = {"mW": _scale(1.0), "uW": _scale(1e-3), "W": _scale(1e3)}
_K = {"K": _scale(1.0)}
_NONE = {"": _scale(1.0)}


@dataclass(frozen=True)
class Column:
    name: str
    unit: str                 # internal unit ("" for dimensionless, None for text)
    accepted: dict | None     # unit -> converter to the internal unit
    required: bool = True
    dtype: str = "float"      # float | str | bool


def _col(name, unit, accepted, required=True):
    return Column(name, unit, accepted, required)


SCHEMAS = {
    "ple-lines": (
        Column("defect_id", None, None, True, "str"),
        Column("form", None, None, True, "str"),
        _col("frequency", "THz", _FREQ_THZ),
        _col("sigma", "MHz", _MHZ),
        Column("mw_on", None, None, True, "bool"),
    ),
    "odmr-resonances": (
        _col("B_mag", "G", _GAUSS),
        _col("B_theta", "deg", _DEG),
        _col("B_phi", "deg", _DEG, required=False),
        _col("frequency", "GHz", _FREQ_GHZ),
        _col("sigma", "MHz", _MHZ),
    ),
    "pl-trace": (
        _col("time", "ns", _NS),
        _col("signal", "", _NONE),
        _col("sigma", "", _NONE, required=False),
        _col("power", "mW", _MW, required=False),
        Column("preparation", None, None, True, "str"),
    ),
    "g2-histogram": (
        _col("tau", "ns", _NS),
        _col("g2", "", _NONE),
    ),
    "linewidth-vs-T": (
        _col("temperature", "K", _K),
        _col("width", "MHz", _MHZ),
        _col("sigma", "MHz", _MHZ, required=False),
    ),
    "saturation": (
        _col("power", "mW", _MW),
        _col("rate", "kHz", _KHZ),
        _col("sigma", "kHz", _KHZ, required=False),
    ),
    # echo, Ramsey and Rabi traces
    "time-trace": (
        _col("time", "us", _US),
        _col("signal", "", _NONE),
        _col("sigma", "", _NONE, required=False),
    ),
}
KINDS = tuple(SCHEMAS)


def _header(col):
    if col.dtype != "float" or col.unit == "":
        return col.name
    return f"{col.name}({col.unit})"


def _split_header(h):
    h = h.strip()
    if h.endswith(")") and "(" in h:
        name, unit = h[:-1].split("(", 1)
        return name.strip(), unit.strip()
    return h, ""


@dataclass
class MeasurementTable:
    kind: str
    columns: dict                       # name -> ndarray, in schema order
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCHEMAS:
            raise TableError(f"unknown table kind {self.kind!r}; expected one of {', '.join(KINDS)}")
        schema = {c.name: c for c in SCHEMAS[self.kind]}
        unknown = [k for k in self.columns if k not in schema]
        if unknown:
            raise TableError(f"{self.kind}: unknown column(s) {', '.join(unknown)}")
        for c in SCHEMAS[self.kind]:
            if c.required and c.name not in self.columns:
                raise TableError(f"{self.kind}: missing column {c.name!r}")
        ordered = {}
        n = None
        for c in SCHEMAS[self.kind]:
            if c.name not in self.columns:
                continue
            v = self.columns[c.name]
            if c.dtype == "float":
                v = np.asarray(v, dtype=float)
                bad = np.flatnonzero(~np.isfinite(v))
                if bad.size:
                    raise TableError(f"row {bad[0] + 1}, column {c.name!r}: non-finite value")
            elif c.dtype == "bool":
                v = np.asarray(v, dtype=bool)
            else:
                v = np.asarray([str(x) for x in v], dtype=object)
            if n is not None and v.shape[0] != n:
                raise TableError(f"column {c.name!r} has {v.shape[0]} rows, expected {n}")
            n = v.shape[0]
            ordered[c.name] = v
        self.columns = ordered

    def __len__(self):
        return 0 if not self.columns else len(next(iter(self.columns.values())))

    def __getitem__(self, name):
        return self.columns[name]

    def get(self, name, default=None):
        return self.columns.get(name, default)

    @property
    def units(self):
        return {c.name: c.unit for c in SCHEMAS[self.kind] if c.name in self.columns}

    def __eq__(self, other):
        if not isinstance(other, MeasurementTable):
            return NotImplemented
        if self.kind != other.kind or list(self.columns) != list(other.columns):
            return False
        if self.metadata != other.metadata:
            return False
        for k, v in self.columns.items():
            w = other.columns[k]
            if v.dtype == object or v.dtype == bool:
                if not np.array_equal(v, w):
                    return False
            elif not np.array_equal(v, w):
                return False
        return True


def _parse_bool(s, row, col):
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise TableError(f"row {row}, column {col!r}: cannot read {s!r} as a boolean")


def parse_table(path, kind):
    """Load a CSV file as a validated, unit-normalised MeasurementTable."""
    if kind not in SCHEMAS:
        raise TableError(f"unknown table kind {kind!r}; expected one of {', '.join(KINDS)}")
    schema = {c.name: c for c in SCHEMAS[kind]}
    metadata = {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body_start = 0
    for i, line in enumerate(lines):
        s = line.strip()
        if s.startswith("#"):
            kv = s[1:].split("=", 1)
            if len(kv) == 2:
                metadata[kv[0].strip()] = kv[1].strip()
            body_start = i + 1
            continue
        break
    body = lines[body_start:]
    if not body:
        raise TableError(f"{path}: no header row")
    reader = csv.reader(body)
    header = next(reader)
    names, converters = [], []
    for h in header:
        name, unit = _split_header(h)
        if name not in schema:
            raise TableError(f"{path}: unknown column {name!r} for kind {kind}")
        col = schema[name]
        if col.dtype != "float":
            if unit:
                raise TableError(f"{path}: column {name!r} takes no unit, got {unit!r}")
            converters.append(None)
        else:
            if unit not in col.accepted:
                want = ", ".join(u or "(none)" for u in col.accepted)
                raise TableError(f"{path}: column {name!r} has unit {unit or '(none)'!r}; expected one of {want}")
            converters.append(col.accepted[unit])
        names.append(name)
    for c in SCHEMAS[kind]:
        if c.required and c.name not in names:
            raise TableError(f"{path}: missing column {c.name!r}")
    raw = {n: [] for n in names}
    for r, rec in enumerate(reader, start=1):
        if not rec or all(not x.strip() for x in rec):
            continue
        if len(rec) != len(names):
            raise TableError(f"{path}: row {r} has {len(rec)} cells, expected {len(names)}")
        for n, cell in zip(names, rec):
            col = schema[n]
            if col.dtype == "float":
                try:
                    v = float(cell)
                except ValueError:
                    raise TableError(f"{path}: row {r}, column {n!r}: cannot read {cell!r} as a number") from None
                if not math.isfinite(v):
                    raise TableError(f"{path}: row {r}, column {n!r}: non-finite value {cell!r}")
                raw[n].append(v)
            elif col.dtype == "bool":
                raw[n].append(_parse_bool(cell, r, n))
            else:
                raw[n].append(cell.strip())
    columns = {}
    for n, conv in zip(names, converters):
        v = raw[n]
        if conv is not None:
            arr = np.asarray(conv(np.asarray(v, dtype=float)), dtype=float)
            bad = np.flatnonzero(~np.isfinite(arr))
            if bad.size:
                raise TableError(f"{path}: row {bad[0] + 1}, column {n!r}: value not convertible")
            columns[n] = arr
        else:
            columns[n] = v
    return MeasurementTable(kind, columns, metadata)


def _fmt(col, v):
    if col.dtype == "float":
        return "%.9g" % v
    if col.dtype == "bool":
        return "1" if v else "0"
    return str(v)


def _open_out(path_or_file):
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        return open(path_or_file, "w", newline="", encoding="utf-8"), True
    return path_or_file, False


def emit_table(table, path, chunk=10000):
    """Write ``table`` as CSV with unit-annotated headers, streamed in chunks.

    ``path`` may also be an open text stream.
    """
    cols = [c for c in SCHEMAS[table.kind] if c.name in table.columns]
    try:
        fh, own = _open_out(path)
        try:
            for k in sorted(table.metadata):
                fh.write(f"# {k} = {table.metadata[k]}\n")
            fh.write(",".join(_header(c) for c in cols) + "\n")
            n = len(table)
            arrays = [table.columns[c.name] for c in cols]
            for start in range(0, n, chunk):
                stop = min(start + chunk, n)
                rows = [",".join(_fmt(c, a[i]) for c, a in zip(cols, arrays)) for i in range(start, stop)]
                fh.write("\n".join(rows) + "\n")
        finally:
            if own:
                fh.close()
    except OSError as exc:
        raise OSError(f"cannot write table to {path}: {exc.strerror or exc}") from exc


def write_csv(path_or_file, header, rows):
    """Plain CSV writer for result tables; floats with 9 significant digits."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return "%.9g" % v
        if isinstance(v, (bool, np.bool_)):
            return "1" if v else "0"
        return str(v)

    fh, own = _open_out(path_or_file)
    try:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")
    finally:
        if own:
            fh.close()


def table_from_rows(kind, header, rows, metadata=None):
    """Build a MeasurementTable from internal-unit rows keyed by column name."""
    cols = {h: [r[k] for r in rows] for k, h in enumerate(header)}
    return MeasurementTable(kind, cols, dict(metadata or {}))
