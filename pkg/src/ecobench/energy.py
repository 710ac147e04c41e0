"""Per-phase energy and carbon accounting around arbitrary workloads.

A tracker runs a sampler thread next to the workload, collects power samples
from a backend and integrates them into kWh. Three backends exist:

* ``constant_power``: a fixed wattage, so energy is P times wall time. The
  default for tests and hosts without hardware counters.
* ``trace_replay``: a recorded (t, watts) trace replaces live sampling; the
  whole trace is integrated regardless of how long the workload ran.
* ``rapl``: powercap-style cumulative microjoule counters, read at every
  sampling tick so counter wraparound is seen at most once per interval.

RAPL counters are machine-global: anything else running on the host is
billed to the tracked workload. Only one tracker may be active per process.
"""

from __future__ import annotations

import csv
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, TypeVar

import numpy as np

from .errors import BackendError, ParameterError, TraceError, TrackerBusyError

JOULES_PER_KWH = 3.6e6
GRAMS_PER_KG = 1000.0
DEFAULT_INTENSITY = 400.0  # g/kWh; a placeholder, not a measured grid value
DEFAULT_CONSTANT_WATTS = 65.0
BACKENDS = ("rapl", "constant_power", "trace_replay")
PHASES = ("train", "inference")
RAPL_ROOT = "/sys/class/powercap"

CSV_NAME = "carbon_energy_metrics.csv"
CSV_HEADER = [
    "model",
    "phase",
    "duration_s",
    "energy_kwh",
    "emissions_g",
    "backend",
    "carbon_intensity_g_per_kwh",
    "sample_count",
]

T = TypeVar("T")


@dataclass(frozen=True)
class PowerSample:
    t: float
    watts: float


@dataclass(frozen=True)
class TrackerConfig:
    backend: str = "constant_power"
    sampling_interval_ms: float = 100.0
    carbon_intensity_g_per_kwh: float = DEFAULT_INTENSITY
    constant_watts: float = DEFAULT_CONSTANT_WATTS
    trace_path: str | None = None
    rapl_domains: tuple[str, ...] | None = None  # None: every top-level package zone
    rapl_root: str = RAPL_ROOT

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ParameterError(f"unknown energy backend {self.backend!r}; expected one of {BACKENDS}")
        if not self.sampling_interval_ms >= 10:
            raise ParameterError(f"sampling_interval_ms must be >= 10, got {self.sampling_interval_ms}")
        if not self.carbon_intensity_g_per_kwh > 0:
            raise ParameterError(f"carbon intensity must be > 0, got {self.carbon_intensity_g_per_kwh}")
        if self.backend == "constant_power" and not self.constant_watts >= 0:
            raise ParameterError(f"constant_watts must be >= 0, got {self.constant_watts}")
        if self.backend == "trace_replay" and not self.trace_path:
            raise ParameterError("trace_replay backend needs trace_path")

    @classmethod
    def from_dict(cls, d: dict) -> TrackerConfig:
        known = {
            "backend",
            "sampling_interval_ms",
            "carbon_intensity_g_per_kwh",
            "constant_watts",
            "trace_path",
            "rapl_domains",
            "rapl_root",
        }
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown tracker keys: {sorted(unknown)}")
        kw = dict(d)
        if kw.get("rapl_domains") is not None:
            kw["rapl_domains"] = tuple(kw["rapl_domains"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "sampling_interval_ms": self.sampling_interval_ms,
            "carbon_intensity_g_per_kwh": self.carbon_intensity_g_per_kwh,
            "constant_watts": self.constant_watts,
            "trace_path": self.trace_path,
            "rapl_domains": list(self.rapl_domains) if self.rapl_domains is not None else None,
            "rapl_root": self.rapl_root,
        }


@dataclass(frozen=True)
class EnergyReport:
    label: str
    phase: str
    duration_s: float
    energy_kwh: float
    emissions_g: float
    backend: str
    carbon_intensity_g_per_kwh: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "model": self.label,
            "phase": self.phase,
            "duration_s": self.duration_s,
            "energy_kwh": self.energy_kwh,
            "emissions_g": self.emissions_g,
            "backend": self.backend,
            "carbon_intensity_g_per_kwh": self.carbon_intensity_g_per_kwh,
            "sample_count": self.sample_count,
        }


# --------------------------------------------------------------------- arithmetic

def integrate_energy(samples) -> float:
    """Trapezoidal integral of watts over seconds, in kWh."""
    if len(samples) < 2:
        return 0.0
    t = np.array([s.t for s in samples], dtype=np.float64)
    w = np.array([s.watts for s in samples], dtype=np.float64)
    if np.any(np.diff(t) <= 0):
        bad = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
        raise TraceError(f"sample timestamps must strictly increase (sample {bad}: t={t[bad]!r})")
    joules = float(np.sum(0.5 * (w[1:] + w[:-1]) * np.diff(t)))
    return joules / JOULES_PER_KWH


def emissions_from_energy(kwh: float, intensity_g_per_kwh: float) -> float:
    if kwh < 0 or intensity_g_per_kwh < 0:
        raise ParameterError("energy and carbon intensity must be non-negative")
    return kwh * intensity_g_per_kwh


def kg_to_g(kg: float) -> float:
    return kg * GRAMS_PER_KG


def microjoules_to_kwh(uj: float) -> float:
    return uj * 1e-6 / JOULES_PER_KWH


def load_trace(path: str | Path) -> list[PowerSample]:
    """Read a two-column ``t,watts`` CSV (header optional)."""
    p = Path(path)
    if not p.exists():
        raise TraceError(f"power trace not found: {p}")
    out = []
    with p.open(newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or not "".join(row).strip():
                continue
            try:
                t, w = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if i == 0:
                    continue  # header
                raise TraceError(f"{p}: line {i + 1} is not a (t, watts) pair: {row!r}") from None
            if not (np.isfinite(t) and np.isfinite(w)) or w < 0:
                raise TraceError(f"{p}: line {i + 1} has an invalid sample ({t!r}, {w!r})")
            out.append(PowerSample(t, w))
    integrate_energy(out)  # monotonicity check
    return out


# --------------------------------------------------------------------------- RAPL

def _zone(domain: str, root: str | Path) -> Path:
    return Path(root) / domain


def read_rapl_counter(domain: str, root: str | Path = RAPL_ROOT) -> int:
    """Raw cumulative counter of a powercap zone, in microjoules."""
    path = _zone(domain, root) / "energy_uj"
    try:
        return int(path.read_text().strip())
    except (OSError, ValueError) as exc:
        raise BackendError(f"cannot read energy counter {path}: {exc}") from exc


def rapl_max_range(domain: str, root: str | Path = RAPL_ROOT) -> int:
    path = _zone(domain, root) / "max_energy_range_uj"
    try:
        return int(path.read_text().strip())
    except (OSError, ValueError) as exc:
        raise BackendError(f"cannot read counter range {path}: {exc}") from exc


def counter_delta(previous: int, current: int, max_range: int) -> int:
    """Counter increase between two reads, assuming at most one wraparound."""
    delta = current - previous
    return delta + max_range if delta < 0 else delta


def discover_rapl_domains(root: str | Path = RAPL_ROOT) -> tuple[str, ...]:
    """Top-level package zones (``intel-rapl:N``); subzones would double count."""
    base = Path(root)
    found = sorted(p.name for p in base.glob("*rapl:*") if p.name.count(":") == 1 and (p / "energy_uj").exists())
    if not found:
        raise BackendError(f"no readable RAPL package zone under {base} (expected {base}/intel-rapl:0/energy_uj)")
    return tuple(found)


# ------------------------------------------------------------------------ sampler

class _Sampler:
    """Produces power samples for one tracked interval."""

    def __init__(self, cfg: TrackerConfig):
        self.cfg = cfg
        self.samples: list[PowerSample] = []
        self.energy_uj = 0
        self._t0 = 0.0
        self._lock = threading.Lock()
        if cfg.backend == "rapl":
            self.domains = cfg.rapl_domains or discover_rapl_domains(cfg.rapl_root)
            self.ranges = [rapl_max_range(d, cfg.rapl_root) for d in self.domains]
            self._last = None

    def _read(self):
        return [read_rapl_counter(d, self.cfg.rapl_root) for d in self.domains]

    def start(self):
        self._t0 = time.perf_counter()
        if self.cfg.backend == "rapl":
            self._last = self._read()
        self.samples.append(PowerSample(0.0, self._watts(0.0)))

    def sample(self):
        with self._lock:
            t = time.perf_counter() - self._t0
            if t <= self.samples[-1].t:
                return
            self.samples.append(PowerSample(t, self._watts(t)))

    def _watts(self, t: float) -> float:
        if self.cfg.backend == "constant_power":
            return float(self.cfg.constant_watts)
        # rapl: average power since the previous read
        if t == 0.0:
            return 0.0
        cur = self._read()
        uj = sum(counter_delta(a, b, r) for a, b, r in zip(self._last, cur, self.ranges))
        self._last = cur
        self.energy_uj += uj
        dt = t - self.samples[-1].t
        return uj * 1e-6 / dt


_ACTIVE = threading.Lock()


def track(
    workload: Callable[[], T],
    cfg: TrackerConfig,
    label: str,
    phase: str,
) -> tuple[T, EnergyReport]:
    """Run ``workload`` under energy tracking; returns (its result, report).

    Raises TrackerBusyError if another tracker is active in this process.
    """
    if phase not in PHASES:
        raise ParameterError(f"phase must be one of {PHASES}, got {phase!r}")
    if not _ACTIVE.acquire(blocking=False):
        raise TrackerBusyError(f"cannot track {label}/{phase}: another tracker is active")
    try:
        trace = load_trace(cfg.trace_path) if cfg.backend == "trace_replay" else None
        sampler = _Sampler(cfg)
        stop = threading.Event()
        interval = cfg.sampling_interval_ms / 1000.0

        def loop():
            while not stop.wait(interval):
                sampler.sample()

        thread = None
        if trace is None:
            sampler.start()
            thread = threading.Thread(target=loop, name=f"ecobench-sampler-{label}", daemon=True)
            thread.start()
        t_start = time.perf_counter()
        try:
            result = workload()
        finally:
            duration = time.perf_counter() - t_start
            if thread is not None:
                stop.set()
                thread.join()
                sampler.sample()
        if trace is not None:
            energy = integrate_energy(trace)
            count = len(trace)
        elif cfg.backend == "rapl":
            energy = microjoules_to_kwh(sampler.energy_uj)
            count = len(sampler.samples)
        else:
            energy = integrate_energy(sampler.samples)
            count = len(sampler.samples)
        intensity = float(cfg.carbon_intensity_g_per_kwh)
        report = EnergyReport(
            label=label,
            phase=phase,
            duration_s=duration,
            energy_kwh=energy,
            emissions_g=emissions_from_energy(energy, intensity),
            backend=cfg.backend,
            carbon_intensity_g_per_kwh=intensity,
            sample_count=count,
        )
        return result, report
    finally:
        _ACTIVE.release()


# ---------------------------------------------------------------------------- CSV

def _sci(x: float) -> str:
    return f"{float(x):.16e}"


def write_carbon_csv(reports, out_dir: str | Path) -> Path:
    path = Path(out_dir) / CSV_NAME
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow(
                [
                    r.label,
                    r.phase,
                    _sci(r.duration_s),
                    _sci(r.energy_kwh),
                    _sci(r.emissions_g),
                    r.backend,
                    _sci(r.carbon_intensity_g_per_kwh),
                    r.sample_count,
                ]
            )
    return path


def read_carbon_csv(path: str | Path) -> list[EnergyReport]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        EnergyReport(
            label=r["model"],
            phase=r["phase"],
            duration_s=float(r["duration_s"]),
            energy_kwh=float(r["energy_kwh"]),
            emissions_g=float(r["emissions_g"]),
            backend=r["backend"],
            carbon_intensity_g_per_kwh=float(r["carbon_intensity_g_per_kwh"]),
            sample_count=int(r["sample_count"]),
        )
        for r in rows
    ]
