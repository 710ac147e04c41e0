"""Eco-Efficiency Index, performance/energy merge, ranking and Pareto front."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import JoinError, ParameterError

DEFAULT_EPS = 1e-12  # kWh
LOW_F1 = 0.5
BASES = ("total", "train")

TABLE_NAME = "eco_table.csv"
TABLE_HEADER = [
    "model",
    "accuracy",
    "f1",
    "roc_auc",
    "train_energy_kwh",
    "infer_energy_kwh",
    "total_energy_kwh",
    "total_emissions_g",
    "eei",
    "on_pareto_front",
]


@dataclass(frozen=True)
class EcoRow:
    model: str
    accuracy: float
    f1: float
    roc_auc: float | None
    train_energy_kwh: float
    infer_energy_kwh: float
    total_energy_kwh: float
    total_emissions_g: float
    eei: float

    @property
    def low_f1(self) -> bool:
        """EEI of a weak detector mostly reflects how little energy it used."""
        return self.f1 < LOW_F1


@dataclass
class EcoTable:
    rows: list[EcoRow]
    eps: float = DEFAULT_EPS
    basis: str = "total"
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        names = [r.model for r in self.rows]
        if len(set(names)) != len(names):
            dup = sorted({m for m in names if names.count(m) > 1})
            raise ParameterError(f"duplicate model names in eco table: {dup}")

    def __len__(self) -> int:
        return len(self.rows)

    def row(self, model: str) -> EcoRow:
        for r in self.rows:
            if r.model == model:
                return r
        raise KeyError(model)


def eco_index(f1: float, energy_kwh: float, eps: float = DEFAULT_EPS) -> float:
    """F1 per kWh, with ``eps`` guarding zero measured energy."""
    if not eps > 0:
        raise ParameterError(f"eps must be > 0, got {eps}")
    if energy_kwh < 0:
        raise ParameterError(f"energy must be non-negative, got {energy_kwh}")
    return f1 / (energy_kwh + eps)


def _eei_energy(row: EcoRow, basis: str) -> float:
    return row.total_energy_kwh if basis == "total" else row.train_energy_kwh


def merge(perf, energy, eps: float = DEFAULT_EPS, basis: str = "total") -> EcoTable:
    """Join metrics rows with their train and inference energy reports by model name."""
    if basis not in BASES:
        raise ParameterError(f"basis must be one of {BASES}, got {basis!r}")
    by_key = {}
    for rep in energy:
        by_key[(rep.label, rep.phase)] = rep
    rows = []
    for p in perf:
        reps = {}
        for phase in ("train", "inference"):
            if (p.model, phase) not in by_key:
                raise JoinError(f"model {p.model!r} has no {phase} energy report")
            reps[phase] = by_key[(p.model, phase)]
        tr, inf = reps["train"], reps["inference"]
        total = tr.energy_kwh + inf.energy_kwh
        row = EcoRow(
            model=p.model,
            accuracy=p.accuracy,
            f1=p.f1,
            roc_auc=p.roc_auc,
            train_energy_kwh=tr.energy_kwh,
            infer_energy_kwh=inf.energy_kwh,
            total_energy_kwh=total,
            total_emissions_g=tr.emissions_g + inf.emissions_g,
            eei=0.0,
        )
        rows.append(replace(row, eei=eco_index(p.f1, _eei_energy(row, basis), eps)))
    table = EcoTable(rows, eps=eps, basis=basis)
    table.notes = [
        f"{r.model}: f1 {r.f1:.4f} < {LOW_F1}; its EEI reflects low energy, not detection quality"
        for r in rows
        if r.low_f1
    ]
    return table


def dominates(a: EcoRow, b: EcoRow) -> bool:
    return (
        a.f1 >= b.f1
        and a.total_energy_kwh <= b.total_energy_kwh
        and (a.f1 > b.f1 or a.total_energy_kwh < b.total_energy_kwh)
    )


def pareto_front(rows) -> list[EcoRow]:
    """Rows not dominated under (max f1, min total energy), by ascending energy.

    Sorting by (energy asc, f1 desc) lets one sweep keep every row whose f1
    is at least the best f1 seen at strictly lower energy; exact duplicates
    do not dominate each other and are both kept.
    """
    rows = list(rows.rows if isinstance(rows, EcoTable) else rows)
    order = sorted(range(len(rows)), key=lambda i: (rows[i].total_energy_kwh, -rows[i].f1, i))
    front = []
    best_f1 = float("-inf")  # best f1 among rows of strictly lower energy
    i = 0
    while i < len(order):
        e = rows[order[i]].total_energy_kwh
        j = i
        while j < len(order) and rows[order[j]].total_energy_kwh == e:
            j += 1
        group = [rows[k] for k in order[i:j]]
        top = group[0].f1  # the group is sorted by f1 descending
        if top > best_f1:
            front.extend(r for r in group if r.f1 == top)
            best_f1 = top
        i = j
    return front


def rank_by_eei(rows) -> list[str]:
    """Model names by descending EEI; ties by ascending energy, then name."""
    rows = rows.rows if isinstance(rows, EcoTable) else rows
    return [r.model for r in sorted(rows, key=lambda r: (-r.eei, r.total_energy_kwh, r.model))]


def _num(x) -> str:
    return "" if x is None else repr(float(x))


def write_eco_csv(table: EcoTable, out_dir: str | Path) -> Path:
    front = {r.model for r in pareto_front(table)} if table.rows else set()
    path = Path(out_dir) / TABLE_NAME
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_HEADER)
        for r in table.rows:
            w.writerow(
                [
                    r.model,
                    _num(r.accuracy),
                    _num(r.f1),
                    _num(r.roc_auc),
                    _num(r.train_energy_kwh),
                    _num(r.infer_energy_kwh),
                    _num(r.total_energy_kwh),
                    _num(r.total_emissions_g),
                    _num(r.eei),
                    "true" if r.model in front else "false",
                ]
            )
    return path


def read_eco_csv(path: str | Path) -> list[dict[str, str]]:
    """Rows of an eco table as raw strings, keyed by header."""
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
