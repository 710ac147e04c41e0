"""Flow-record schema, CSV ingestion, invariant validation and synthetic data.

Datasets are stored column-wise (one numpy array per field) because every
downstream consumer works on whole columns; :meth:`Dataset.records` gives the
row view when one is needed.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ParameterError, ParseError, SchemaError, ValidationError

INT, FLOAT, CAT = "int", "float", "cat"

# canonical column -> storage kind, in canonical file order
SCHEMA: dict[str, str] = {
    "packet_count": INT,
    "byte_count": INT,
    "flow_duration": FLOAT,
    "protocol_type": CAT,
    "src_port": INT,
    "dst_port": INT,
    "avg_pkt_size": FLOAT,
    "payload_entropy": FLOAT,
    "connection_state": CAT,
    "cpu_util": FLOAT,
    "mem_util": FLOAT,
    "disk_io_util": FLOAT,
    "net_io_util": FLOAT,
    "vm_count": INT,
    "power_consumption_watts": FLOAT,
    "carbon_emission_gCO2eq": FLOAT,
    "energy_cost_usd": FLOAT,
    "pue": FLOAT,
    "status": INT,
}
CANONICAL_COLUMNS = tuple(SCHEMA)
CATEGORICAL_COLUMNS = tuple(c for c, k in SCHEMA.items() if k == CAT)
NUMERIC_COLUMNS = tuple(c for c, k in SCHEMA.items() if k != CAT and c != "status")
UTILIZATION_COLUMNS = ("cpu_util", "mem_util", "disk_io_util", "net_io_util")
SUSTAINABILITY_COLUMNS = ("power_consumption_watts", "carbon_emission_gCO2eq", "energy_cost_usd", "pue")

# (lower, upper) inclusive bounds; None means unbounded on that side
BOUNDS: dict[str, tuple[float | None, float | None]] = {
    "packet_count": (0, None),
    "byte_count": (0, None),
    "flow_duration": (0.0, None),
    "src_port": (0, 65535),
    "dst_port": (0, 65535),
    "avg_pkt_size": (0.0, None),
    "payload_entropy": (0.0, 8.0),
    "cpu_util": (0.0, 100.0),
    "mem_util": (0.0, 100.0),
    "disk_io_util": (0.0, 100.0),
    "net_io_util": (0.0, 100.0),
    "vm_count": (1, None),
    "power_consumption_watts": (0.0, None),
    "carbon_emission_gCO2eq": (0.0, None),
    "energy_cost_usd": (0.0, None),
    "pue": (1.0, None),
}

POLICIES = ("reject", "clamp", "drop-row")


@dataclass(frozen=True)
class FlowRecord:
    packet_count: int
    byte_count: int
    flow_duration: float
    protocol_type: str
    src_port: int
    dst_port: int
    avg_pkt_size: float
    payload_entropy: float
    connection_state: str
    cpu_util: float
    mem_util: float
    disk_io_util: float
    net_io_util: float
    vm_count: int
    power_consumption_watts: float
    carbon_emission_gCO2eq: float
    energy_cost_usd: float
    pue: float
    status: int


@dataclass
class Dataset:
    """Column store of flow records.

    ``columns`` always holds every canonical field; engineered features are
    appended after them by :func:`ecobench.preprocess.engineer_features`.
    """

    columns: dict[str, np.ndarray]
    source: str = ""
    column_mapping: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise SchemaError(f"columns have unequal lengths: {sorted(lengths)}")
        missing = [c for c in CANONICAL_COLUMNS if c not in self.columns]
        if missing:
            raise SchemaError(f"missing required column(s): {', '.join(missing)}")

    def __len__(self) -> int:
        return len(self.columns["status"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def column_names(self) -> list[str]:
        return list(self.columns)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset({k: v[rows] for k, v in self.columns.items()}, self.source, dict(self.column_mapping))

    def with_columns(self, extra: Mapping[str, np.ndarray]) -> "Dataset":
        cols = dict(self.columns)
        cols.update(extra)
        return Dataset(cols, self.source, dict(self.column_mapping))

    def records(self) -> list[FlowRecord]:
        names = [f.name for f in fields(FlowRecord)]
        out = []
        for i in range(len(self)):
            row = {}
            for n in names:
                v = self.columns[n][i]
                row[n] = str(v) if SCHEMA[n] == CAT else (int(v) if SCHEMA[n] == INT else float(v))
            out.append(FlowRecord(**row))
        return out

    @classmethod
    def from_records(cls, records: list[FlowRecord], source: str = "records") -> "Dataset":
        cols = {}
        for name, kind in SCHEMA.items():
            vals = [getattr(r, name) for r in records]
            cols[name] = _typed_array(vals, kind)
        return cls(cols, source)

    def equals(self, other: "Dataset") -> bool:
        if self.column_names != other.column_names:
            return False
        return all(np.array_equal(self[c], other[c]) for c in self.columns)


def _typed_array(values, kind: str) -> np.ndarray:
    if kind == CAT:
        return np.array([str(v) for v in values], dtype=object)
    if kind == INT:
        return np.array(values, dtype=np.int64)
    return np.array(values, dtype=np.float64)


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        x = float(text)
        if not x.is_integer():
            raise
        return int(x)


# --------------------------------------------------------------------------- CSV

def load_csv(path: str | Path, mapping: Mapping[str, str] | None = None) -> Dataset:
    """Read a flow CSV into a :class:`Dataset`.

    ``mapping`` renames external header names to canonical ones. Columns that
    are neither canonical nor mapped are ignored. All unparseable cells are
    collected and raised together as a :class:`ParseError`.
    """
    path = Path(path)
    mapping = dict(mapping or {})
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        canon = [mapping.get(h, h) for h in header]
        missing = [c for c in CANONICAL_COLUMNS if c not in canon]
        if missing:
            raise SchemaError(f"{path}: missing required column(s): {', '.join(missing)}")
        position = {c: canon.index(c) for c in CANONICAL_COLUMNS}
        raw: dict[str, list] = {c: [] for c in CANONICAL_COLUMNS}
        problems: list[tuple[int, str, str]] = []
        for row_idx, row in enumerate(reader):
            if not row:
                continue
            for col, pos in position.items():
                cell = row[pos].strip() if pos < len(row) else ""
                kind = SCHEMA[col]
                try:
                    if kind == CAT:
                        if cell == "":
                            raise ValueError
                        val = cell
                    elif kind == INT:
                        val = _parse_int(cell)
                    else:
                        val = float(cell)
                except ValueError:
                    problems.append((row_idx, col, cell))
                    val = None
                raw[col].append(val)
    if problems:
        raise ParseError(problems)
    cols = {c: _typed_array(v, SCHEMA[c]) for c, v in raw.items()}
    return Dataset(cols, source=str(path), column_mapping=mapping)


def _format_cell(value, kind: str) -> str:
    if kind == CAT:
        return str(value)
    if kind == INT:
        return str(int(value))
    return repr(float(value))


def write_csv(ds: Dataset, path: str | Path) -> Path:
    """Write ``ds`` in the ingestion format; floats use shortest round-trip repr."""
    path = Path(path)
    names = ds.column_names
    kinds = [SCHEMA.get(n, FLOAT) for n in names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        cols = [ds[n] for n in names]
        for i in range(len(ds)):
            w.writerow([_format_cell(c[i], k) for c, k in zip(cols, kinds)])
    return path


# --------------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    policy: str
    rule_counts: Counter = field(default_factory=Counter)
    row_violations: dict[int, list[str]] = field(default_factory=dict)
    input_rows: int = 0
    dropped_rows: list[int] = field(default_factory=list)

    @property
    def total_violations(self) -> int:
        return sum(self.rule_counts.values())

    @property
    def retained_rows(self) -> int:
        return self.input_rows - len(self.dropped_rows)

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "input_rows": self.input_rows,
            "retained_rows": self.retained_rows,
            "total_violations": self.total_violations,
            "dropped_rows": list(self.dropped_rows),
            "rule_counts": dict(sorted(self.rule_counts.items())),
            "row_violations": {str(k): v for k, v in sorted(self.row_violations.items())},
        }


def validate(ds: Dataset, policy: str = "reject") -> tuple[Dataset, ValidationReport]:
    """Check every FlowRecord invariant and apply ``policy`` to violating rows.

    ``clamp`` moves out-of-range numbers onto the violated bound; violations
    with no bound to clamp to (non-finite values, a status outside {0, 1})
    drop the row instead.
    """
    if policy not in POLICIES:
        raise ParameterError(f"unknown validation policy {policy!r}; expected one of {POLICIES}")
    n = len(ds)
    report = ValidationReport(policy=policy, input_rows=n)
    unclampable = np.zeros(n, dtype=bool)
    fixes: dict[str, np.ndarray] = {}

    def flag(rule: str, mask: np.ndarray):
        idx = np.flatnonzero(mask)
        if idx.size:
            report.rule_counts[rule] += int(idx.size)
            for i in idx.tolist():
                report.row_violations.setdefault(i, []).append(rule)

    for col, (lo, hi) in BOUNDS.items():
        x = ds[col]
        if x.dtype.kind == "f":
            bad = ~np.isfinite(x)
            flag(f"{col}:non_finite", bad)
            unclampable |= bad
        clamped = x
        if lo is not None:
            below = x < lo
            flag(f"{col}:below_min", below)
            clamped = np.where(below, lo, clamped)
        if hi is not None:
            above = x > hi
            flag(f"{col}:above_max", above)
            clamped = np.where(above, hi, clamped)
        if clamped is not x:
            fixes[col] = clamped.astype(x.dtype)

    bad_status = ~np.isin(ds["status"], (0, 1))
    flag("status:not_binary", bad_status)
    unclampable |= bad_status

    violating = np.zeros(n, dtype=bool)
    if report.row_violations:
        violating[list(report.row_violations)] = True

    if policy == "reject":
        if report.total_violations:
            raise ValidationError(report)
        return ds, report
    if policy == "drop-row":
        drop = violating
        out = ds
    else:
        drop = unclampable
        out = ds.with_columns(fixes) if fixes else ds
    report.dropped_rows = np.flatnonzero(drop).tolist()
    if drop.any():
        out = out.take(np.flatnonzero(~drop))
    return out, report


# ---------------------------------------------------------------------- synthetic

_LOAD_WEIGHT = 0.9  # correlation of each utilization with the latent load
_RIM_RADIUS = 3.0
_RIM_SPREAD = 0.5
_CORE_SCALE = 0.5
_VOLUME_SIGMA = 0.8
_VM_LOAD = 1.0
_ENTROPY_SIZE = 0.8  # larger packets tend to carry encrypted payloads
_PUE_LOAD = 0.05
_TRAFFIC_SHIFT = 0.5
_PORT_SHIFT = 0.3
# (destination port, protocol, weight) of the well-known services
_SERVICES = [(53, "UDP", 0.3), (123, "UDP", 0.2), (443, "TCP", 0.25), (80, "TCP", 0.15), (22, "TCP", 0.1)]
_STATE_MIX = {
    "TCP": (["EST", "FIN", "RST", "SYN"], [0.3, 0.35, 0.15, 0.2]),
    "UDP": (["EST", "FIN"], [0.3, 0.7]),
    "ICMP": (["FIN", "RST"], [0.5, 0.5]),
}


def _truncnorm(rng: np.random.Generator, mean, sd, lo, hi, size) -> np.ndarray:
    """Rejection sampler; ``mean`` may be an array (per-row shifts).

    Means outside [lo, hi] are first pulled onto the nearer bound (a
    saturated utilization), which keeps the acceptance rate at least 1/2.
    """
    mean = np.clip(np.broadcast_to(np.asarray(mean, dtype=float), (size,)), lo, hi)
    out = rng.normal(mean, sd)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = rng.normal(mean[bad], sd)
        bad = (out < lo) | (out > hi)
    return out


def generate_synthetic(
    n: int,
    anomaly_fraction: float = 0.25,
    signal_strength: float = 1.0,
    seed: int = 0,
    *,
    interaction: bool = False,
) -> Dataset:
    """Draw a schema-compatible flow dataset with a controllable anomaly signal.

    A few latent factors drive groups of columns, as in real flow logs:
    resource load drives the utilizations, VM count and power (and through
    power carbon and cost); packet size drives size, entropy and bytes;
    traffic volume drives packet count and duration; the destination service
    decides port, protocol and connection state. Traffic volumes are
    log-normal and utilizations truncated-normal, giving mildly skewed,
    outlier-bearing marginals.

    Anomalous rows have utilization and power shifted upward by
    ``signal_strength`` standard deviations, and carry smaller shifts in
    volume, entropy and the share of unregistered destination ports.

    With ``interaction`` set, anomalies also sit on a rim of the latent
    (load, packet size) plane while normal flows stay in its core. The rim is
    symmetric, so most of that signal is invisible to a linear score.
    """
    if n < 10:
        raise ParameterError(f"n must be >= 10, got {n}")
    if not 0.0 < anomaly_fraction < 1.0:
        raise ParameterError(f"anomaly_fraction must lie in (0, 1), got {anomaly_fraction}")
    if signal_strength < 0:
        raise ParameterError(f"signal_strength must be non-negative, got {signal_strength}")

    rng = np.random.default_rng(seed)
    n_anom = int(math.floor(n * anomaly_fraction + 0.5))
    status = np.zeros(n, dtype=np.int64)
    status[rng.permutation(n)[:n_anom]] = 1
    shift = signal_strength * status

    # latent space: z_load drives resource utilization, z_size packet size,
    # z_volume packet count and duration, z_entropy payload entropy
    z = rng.normal(0.0, 1.0, (n, 4))
    if interaction:
        # anomalies on a rim of the (load, size) plane, normal flows in its core
        radius = np.hypot(z[:, 0], z[:, 1])
        rim = _RIM_RADIUS + np.abs(rng.normal(0.0, _RIM_SPREAD, n))
        z[:, :2] *= np.where(status == 1, rim / radius, _CORE_SCALE)[:, None]
    z_load, z_size, z_volume, z_entropy = z.T
    # anomalous flows also move more data with higher-entropy payloads
    z_volume = z_volume + _TRAFFIC_SHIFT * shift
    z_entropy = z_entropy + _TRAFFIC_SHIFT * shift

    # traffic: duration and packet count share a volume factor
    packet_count = np.maximum(1, np.rint(np.exp(np.log(40.0) + _VOLUME_SIGMA * z_volume))).astype(np.int64)
    flow_duration = np.exp(np.log(1.5) + _VOLUME_SIGMA * z_volume + 0.3 * rng.normal(0.0, 1.0, n))
    payload_entropy = np.clip(5.0 + _ENTROPY_SIZE * z_size + math.sqrt(1.0 - _ENTROPY_SIZE**2) * z_entropy, 0.0, 8.0)
    avg_pkt_size = np.clip(600.0 + 200.0 * z_size, 20.0, 1500.0)
    byte_count = np.rint(packet_count * avg_pkt_size * rng.lognormal(0.0, 0.05, n)).astype(np.int64)

    # service: destination port decides the protocol, protocol the state mix
    src_port = rng.integers(1024, 65536, n)
    service = rng.choice(len(_SERVICES), size=n, p=[w for _, _, w in _SERVICES])
    known = rng.random(n) < 0.7 - _PORT_SHIFT * np.minimum(shift, 1.0)
    dst_port = np.where(known, np.array([p for p, _, _ in _SERVICES])[service], rng.integers(0, 65536, n))
    dst_port = dst_port.astype(np.int64)
    known_proto = np.array([proto for _, proto, _ in _SERVICES], dtype=object)[service]
    other_proto = rng.choice(np.array(["UDP", "TCP", "ICMP"], dtype=object), size=n, p=[0.5, 0.2, 0.3])
    protocol_type = np.where(known, known_proto, other_proto)
    connection_state = np.empty(n, dtype=object)
    for proto, (states, probs) in _STATE_MIX.items():
        mask = protocol_type == proto
        connection_state[mask] = rng.choice(np.array(states, dtype=object), size=int(mask.sum()), p=probs)

    # resource utilization (%): shared load factor plus per-resource noise
    util = {}
    for col, (mean, sd) in zip(UTILIZATION_COLUMNS, [(40.0, 15.0), (50.0, 15.0), (30.0, 12.0), (35.0, 15.0)]):
        center = mean + sd * (_LOAD_WEIGHT * z_load + shift)
        util[col] = _truncnorm(rng, center, sd * math.sqrt(1.0 - _LOAD_WEIGHT**2), 0.0, 100.0, n)
    vm_count = (1 + rng.poisson(np.maximum(0.2, 2.5 + _VM_LOAD * z_load))).astype(np.int64)

    # sustainability fields; carbon and cost inherit the power shift
    power_sd = 15.0
    power = (
        120.0
        + 1.2 * util["cpu_util"]
        + 0.6 * util["mem_util"]
        + 0.3 * (util["disk_io_util"] + util["net_io_util"])
        + rng.normal(0.0, power_sd, n)
        + shift * power_sd
    )
    power = np.maximum(power, 0.0)
    # cooling overhead weighs more on lightly loaded hosts
    pue = np.maximum(1.0, 1.2 + rng.gamma(2.0, 0.04, n) - _PUE_LOAD * z_load)
    carbon = power * pue * 0.4 * rng.lognormal(0.0, 0.1, n)
    cost = power * pue * 1.5e-4 * rng.lognormal(0.0, 0.1, n)

    cols = {
        "packet_count": packet_count,
        "byte_count": byte_count,
        "flow_duration": flow_duration,
        "protocol_type": protocol_type,
        "src_port": src_port.astype(np.int64),
        "dst_port": dst_port,
        "avg_pkt_size": avg_pkt_size,
        "payload_entropy": payload_entropy,
        "connection_state": connection_state,
        **util,
        "vm_count": vm_count,
        "power_consumption_watts": power,
        "carbon_emission_gCO2eq": carbon,
        "energy_cost_usd": cost,
        "pue": pue,
        "status": status,
    }
    source = (
        f"synthetic:n={n},anomaly_fraction={anomaly_fraction!r},signal_strength={signal_strength!r},"
        f"seed={seed},interaction={interaction}"
    )
    return Dataset({c: cols[c] for c in CANONICAL_COLUMNS}, source=source)
