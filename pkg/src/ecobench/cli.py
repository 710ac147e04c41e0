"""Command line: synth, ingest, eda, bench, tune, report.

Every command writes into a staging directory next to the output directory
and moves the files over only after all stages succeed, so a failed run
leaves no partial outputs and no manifest behind.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, models
from .analysis import write_eda
from .dataset import Dataset, generate_synthetic, load_csv, validate, write_csv
from .eco import DEFAULT_EPS, BASES, TABLE_NAME, merge, pareto_front, rank_by_eei, read_eco_csv, write_eco_csv
from .energy import TrackerConfig, track, write_carbon_csv
from .errors import ConfigError, DataError, EcoBenchError
from .preprocess import (
    apply_scaler,
    encode,
    engineer_features,
    fit_scaler,
    pca_fit,
    pca_transform,
    smote,
    stratified_split,
)
from .tune import DEFAULT_SPACES, SearchSpace, evaluate, random_search, write_cv_csv

MANIFEST = "manifest.json"
RESULTS = "results.json"
DATASET_NAME = "dataset.csv"
PLOT_FILES = {
    "f1_vs_energy.csv": ["model", "f1", "total_energy_kwh", "on_pareto_front"],
    "accuracy_vs_emissions.csv": ["model", "accuracy", "total_emissions_g"],
}
# files whose bytes depend on wall-clock time or measured energy
_NONDETERMINISTIC = {RESULTS, "carbon_energy_metrics.csv", TABLE_NAME, "plots/f1_vs_energy.csv", "plots/accuracy_vs_emissions.csv"}

SYNTHETIC_DEFAULTS = {"n": 2300, "anomaly_fraction": 0.25, "signal_strength": 1.0, "interaction": True}
SEARCH_DEFAULTS = {"family": "random_forest", "n_iter": 10, "k": 5, "space": None}


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str | None = None  # CSV path; None means the synthetic generator
    synthetic: dict = field(default_factory=lambda: dict(SYNTHETIC_DEFAULTS))
    column_mapping: dict = field(default_factory=dict)
    validation_policy: str = "reject"
    models: list = field(default_factory=lambda: list(models.FAMILIES))
    hyperparams: dict = field(default_factory=dict)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    eps: float = DEFAULT_EPS
    eei_basis: str = "total"
    test_fraction: float = 0.2
    smote_k: int = 5
    pca_threshold: float | None = None
    exclude_sustainability: bool = False
    scale_before_split: bool = False  # reproduces the leaky order; off by default
    search: dict = field(default_factory=lambda: dict(SEARCH_DEFAULTS))
    out: str = "ecobench-out"

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError(f"seed must be an integer, got {self.seed!r}")
        unknown = [m for m in self.models if m not in models.FAMILIES]
        if unknown or not self.models:
            raise ConfigError(f"models must be a non-empty subset of {models.FAMILIES}, got {self.models}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError(f"duplicate entries in models: {self.models}")
        for fam, hp in self.hyperparams.items():
            models.Hyperparams.make(fam, hp, self.seed)
        extra = set(self.synthetic) - set(SYNTHETIC_DEFAULTS)
        if extra:
            raise ConfigError(f"unknown synthetic keys: {sorted(extra)}")
        self.synthetic = {**SYNTHETIC_DEFAULTS, **self.synthetic}
        extra = set(self.search) - set(SEARCH_DEFAULTS)
        if extra:
            raise ConfigError(f"unknown search keys: {sorted(extra)}")
        self.search = {**SEARCH_DEFAULTS, **self.search}
        if self.eei_basis not in BASES:
            raise ConfigError(f"eei_basis must be one of {BASES}, got {self.eei_basis!r}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.pca_threshold is not None and not 0 < self.pca_threshold <= 1:
            raise ConfigError(f"pca_threshold must be in (0, 1], got {self.pca_threshold}")

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        if "tracker" in kw:
            kw["tracker"] = TrackerConfig.from_dict(kw["tracker"])
        return cls(**kw)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["tracker"] = self.tracker.to_dict()
        d.pop("out")  # where results go is not part of what was run
        return json.loads(json.dumps(d, sort_keys=True))


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return d


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ------------------------------------------------------------------- staging

class StageFailed(Exception):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        if isinstance(cause, EcoBenchError):
            self.exit_code = cause.exit_code
        elif isinstance(cause, (OSError, UnicodeDecodeError)):
            self.exit_code = DataError.exit_code
        else:
            self.exit_code = 3
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


class Run:
    """Stage bookkeeping plus a staging directory that is published atomically per file."""

    def __init__(self, command: str, cfg: RunConfig, out: Path):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.stages: dict[str, str] = {}
        self.files: list[str] = []
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=".ecobench-staging-", dir=self.out.parent))

    def stage(self, name: str, fn, *args, **kw):
        try:
            result = fn(*args, **kw)
        except StageFailed:
            raise
        except Exception as exc:  # every failure is reported under its stage name
            self.stages[name] = "failed"
            raise StageFailed(name, exc) from exc
        self.stages[name] = "ok"
        return result

    def path(self, rel: str) -> Path:
        p = self.staging / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.files:
            self.files.append(rel)
        return p

    def adopt(self, paths) -> None:
        for p in paths:
            rel = Path(p).relative_to(self.staging).as_posix()
            if rel not in self.files:
                self.files.append(rel)

    def publish(self) -> dict:
        manifest = build_manifest(self.command, self.cfg.to_dict(), self.stages, self.staging, self.files)
        (self.staging / MANIFEST).write_text(canonical_json(manifest))
        self.out.mkdir(parents=True, exist_ok=True)
        stale = self.out / MANIFEST
        if stale.exists():
            stale.unlink()  # never leave an old manifest next to half-replaced files
        for rel in [*self.files, MANIFEST]:
            dst = self.out / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(self.staging / rel, dst)
        self.discard()
        return manifest

    def discard(self) -> None:
        shutil.rmtree(self.staging, ignore_errors=True)


def build_manifest(command: str, config: dict, stages: dict, root: Path, files: list[str]) -> dict:
    return {
        "tool": "ecobench",
        "version": __version__,
        "command": command,
        "status": "success",
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config": config,
        "stages": dict(stages),
        "files": [
            {
                "path": rel,
                "sha256": sha256_file(root / rel),
                "bytes": (root / rel).stat().st_size,
                "deterministic": rel not in _NONDETERMINISTIC,
            }
            for rel in sorted(files)
        ],
    }


def verify_manifest(directory: str | Path) -> list[str]:
    """Paths listed in the manifest that are missing or whose digest differs."""
    root = Path(directory)
    manifest = json.loads((root / MANIFEST).read_text())
    bad = []
    for entry in manifest["files"]:
        p = root / entry["path"]
        if not p.is_file() or sha256_file(p) != entry["sha256"]:
            bad.append(entry["path"])
    return bad


# ------------------------------------------------------------------ pipeline

def load_dataset(cfg: RunConfig) -> Dataset:
    if cfg.dataset is None:
        s = cfg.synthetic
        return generate_synthetic(
            int(s["n"]), s["anomaly_fraction"], s["signal_strength"], cfg.seed, interaction=bool(s["interaction"])
        )
    return load_csv(cfg.dataset, cfg.column_mapping)


def _prepared(run: Run):
    """Shared front half: load, validate, engineer, encode, split, scale, SMOTE."""
    cfg = run.cfg
    ds = run.stage("load", load_dataset, cfg)
    ds, report = run.stage("validate", validate, ds, cfg.validation_policy)
    ds = run.stage("engineer", engineer_features, ds)
    fm, enc = run.stage("encode", encode, ds, cfg.exclude_sustainability)

    def split_and_scale():
        if cfg.scale_before_split:
            scaled = apply_scaler(fm, fit_scaler(fm))
            sp = stratified_split(scaled, cfg.test_fraction, cfg.seed)
            return sp, sp.train, sp.test
        sp = stratified_split(fm, cfg.test_fraction, cfg.seed)
        params = fit_scaler(sp.train)
        return sp, apply_scaler(sp.train, params), apply_scaler(sp.test, params)

    sp, train, test = run.stage("split_scale", split_and_scale)
    balanced = run.stage("smote", smote, train, cfg.smote_k, cfg.seed)
    info = {
        "source": ds.source,
        "rows": len(ds),
        "anomalies": int(ds["status"].sum()),
        "features": list(fm.columns),
        "validation": report.to_dict(),
        "train_rows": int(len(sp.train_idx)),
        "test_rows": int(len(sp.test_idx)),
        "smote_rows": int(len(balanced.labels)),
        "scale_before_split": cfg.scale_before_split,
    }
    return ds, sp, train, test, balanced, info


def _run_model(run: Run, name: str, family: str, train, balanced, test, hp, reports: list, pca_threshold=None):
    """Tracked train and inference of one detector; returns (MetricsRow, model, pca)."""
    cfg = run.cfg
    rebalance = family != "isolation_forest"

    def fit():
        proj = None
        tr = balanced if rebalance else train
        if pca_threshold is not None:
            proj = pca_fit(train, pca_threshold)
            tr = pca_transform(proj, train)
            tr = smote(tr, cfg.smote_k, cfg.seed) if rebalance else tr
        return proj, models.train(family, tr.values, tr.labels, hp, cfg.seed)

    (proj, model), rep = run.stage(f"train:{name}", track, fit, cfg.tracker, name, "train")
    reports.append(rep)

    def infer():
        X = test if proj is None else pca_transform(proj, test)
        return X, models.predict(model, X.values)

    (X, _), rep = run.stage(f"inference:{name}", track, infer, cfg.tracker, name, "inference")
    reports.append(rep)
    row = run.stage(f"metrics:{name}", evaluate, model, X, name)
    run.stage(f"save:{name}", models.save_model, model, run.path(f"models/{name}.json"))
    return row, model, proj


def _model_entry(row, model, proj) -> dict:
    entry = {
        "family": model.family,
        "hyperparams": model.hyperparams.values,
        "hyperparams_canonical": model.hyperparams.canonical(),
        "seed": model.hyperparams.seed,
        "n_features": model.n_features,
        "metrics": {k: getattr(row, k) for k in ("accuracy", "precision", "recall", "f1", "roc_auc")},
    }
    if proj is not None:
        entry["pca"] = {"n_components": proj.n_components, "retained_variance_ratio": proj.retained_variance_ratio}
    return entry


def _bench(run: Run, extra=None) -> dict:
    cfg = run.cfg
    ds, sp, train, test, balanced, info = _prepared(run)
    run.adopt(run.stage("eda", write_eda, ds, run.staging / "eda"))
    rows, reports, entries = [], [], {}

    def add(name, family, hp, pca_threshold=None):
        row, model, proj = _run_model(run, name, family, train, balanced, test, hp, reports, pca_threshold)
        rows.append(row)
        entries[name] = _model_entry(row, model, proj)

    for fam in cfg.models:
        hp = models.Hyperparams.make(fam, cfg.hyperparams.get(fam), cfg.seed)
        add(fam, fam, hp)
        if cfg.pca_threshold is not None:
            add(f"{fam}_pca", fam, hp, cfg.pca_threshold)

    tuning = extra(sp, add) if extra else None

    table = run.stage("merge", merge, rows, reports, cfg.eps, cfg.eei_basis)
    front = [r.model for r in pareto_front(table)]
    ranking = rank_by_eei(table)

    def write():
        write_carbon_csv(reports, run.staging)
        run.path("carbon_energy_metrics.csv")
        write_eco_csv(table, run.staging)
        run.path(TABLE_NAME)
        results = {
            "deterministic": {
                "config": cfg.to_dict(),
                "seed": cfg.seed,
                "data": info,
                "models": entries,
                "tuning": tuning,
            },
            "nondeterministic": {
                "energy": [r.to_dict() for r in reports],
                "eco": {
                    "rows": [dataclasses.asdict(r) for r in table.rows],
                    "ranking": ranking,
                    "pareto_front": front,
                    "notes": table.notes,
                },
            },
        }
        run.path(RESULTS).write_text(canonical_json(results))
        return results

    return run.stage("write", write)


def _tuning(run: Run):
    cfg = run.cfg
    s = cfg.search
    family = s["family"]
    if family not in DEFAULT_SPACES and not s["space"]:
        raise ConfigError(f"no search space for {family!r}; give search.space")
    space = SearchSpace.from_dict(s["space"]) if s["space"] else DEFAULT_SPACES[family]

    def extra(sp, add):
        raw = sp.train  # scaling and SMOTE are refit inside each fold
        best, results = run.stage(
            "search",
            random_search,
            family,
            space,
            raw,
            int(s["n_iter"]),
            int(s["k"]),
            cfg.seed,
            base=cfg.hyperparams.get(family),
            smote_k=cfg.smote_k,
        )
        write_cv_csv(results, run.staging)
        run.path("cv_results.csv")
        add(f"{family}_optimized", family, best)
        return {
            "family": family,
            "best": best.canonical(),
            "results": [
                {"iter": r.iter, "hyperparams": r.hyperparams.canonical(), "fold_f1s": r.fold_f1s,
                 "mean_f1": r.mean_f1, "rank": r.rank, "failed": r.failed, "error": r.error}
                for r in results
            ],
        }

    return extra


def run_bench(cfg: RunConfig, out: str | Path) -> dict:
    return _execute("bench", cfg, out, lambda run: _bench(run))


def run_tune(cfg: RunConfig, out: str | Path) -> dict:
    return _execute("tune", cfg, out, lambda run: _bench(run, _tuning(run)))


def _execute(command: str, cfg: RunConfig, out, body) -> dict:
    run = Run(command, cfg, Path(out))
    try:
        body(run)
        return run.publish()
    except StageFailed:
        run.discard()
        raise
    except Exception as exc:
        run.discard()
        raise StageFailed("setup", exc) from exc
    except BaseException:
        run.discard()
        raise


def run_synth(cfg: RunConfig, out) -> dict:
    def body(run):
        ds = run.stage("load", load_dataset, cfg)
        run.stage("validate", validate, ds, "reject")
        run.stage("write", write_csv, ds, run.path(DATASET_NAME))

    return _execute("synth", cfg, out, body)


def run_ingest(cfg: RunConfig, out) -> dict:
    def body(run):
        if cfg.dataset is None:
            raise StageFailed("load", ConfigError("ingest needs a dataset path"))
        ds = run.stage("load", load_dataset, cfg)
        ds, report = run.stage("validate", validate, ds, cfg.validation_policy)
        run.stage("write", write_csv, ds, run.path(DATASET_NAME))
        run.path("validation_report.json").write_text(canonical_json(report.to_dict()))

    return _execute("ingest", cfg, out, body)


def run_eda(cfg: RunConfig, out) -> dict:
    def body(run):
        ds = run.stage("load", load_dataset, cfg)
        ds, _ = run.stage("validate", validate, ds, cfg.validation_policy)
        ds = run.stage("engineer", engineer_features, ds)
        run.adopt(run.stage("eda", write_eda, ds, run.staging / "eda"))

    return _execute("eda", cfg, out, body)


def _sort_key(row: dict):
    return (-float(row["eei"]), float(row["total_energy_kwh"]), row["model"])


def run_report(directory: str | Path, stream=None) -> list[dict]:
    """Print the eco table ranked by EEI and write the plot-data CSVs.

    Values are copied from eco_table.csv as text, so the plot files agree
    with it byte for byte.
    """
    stream = stream or sys.stdout
    root = Path(directory)
    if not (root / MANIFEST).is_file():
        raise StageFailed("report", DataError(f"{root} has no {MANIFEST}"))
    try:
        rows = read_eco_csv(root / TABLE_NAME)
    except OSError as exc:
        raise StageFailed("report", exc) from None
    plots = root / "plots"
    plots.mkdir(exist_ok=True)
    for name, cols in PLOT_FILES.items():
        with (plots / name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([r[c] for c in cols])
    manifest = json.loads((root / MANIFEST).read_text())
    listed = {e["path"] for e in manifest["files"]}
    files = sorted(listed | {f"plots/{n}" for n in PLOT_FILES})
    manifest["files"] = build_manifest("", {}, {}, root, files)["files"]
    manifest["stages"]["report"] = "ok"
    (root / MANIFEST).write_text(canonical_json(manifest))

    if not rows:
        print("warning: eco table is empty; plot files contain headers only", file=sys.stderr)
        return []
    ranked = sorted(rows, key=_sort_key)
    print(f"{'rank':>4}  {'model':<28} {'f1':>8} {'accuracy':>9} {'energy_kwh':>12} {'eei':>12}  pareto", file=stream)
    for i, r in enumerate(ranked, start=1):
        print(
            f"{i:>4}  {r['model']:<28} {float(r['f1']):>8.4f} {float(r['accuracy']):>9.4f} "
            f"{float(r['total_energy_kwh']):>12.4e} {float(r['eei']):>12.4e}  {r['on_pareto_front']}",
            file=stream,
        )
    return ranked


# ----------------------------------------------------------------- argparse

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (ECOBENCH_OUT takes precedence)")
    p.add_argument("--models", help="comma-separated model families")
    p.add_argument("--backend", help="energy backend: rapl, constant_power or trace_replay")
    p.add_argument("--carbon-intensity", type=float, dest="carbon_intensity", metavar="G_PER_KWH")
    p.add_argument("--exclude-sustainability", action="store_true", default=None)
    p.add_argument("--pca-threshold", type=float, dest="pca_threshold", metavar="R")
    p.add_argument("--dataset", help="flow CSV to use instead of the synthetic generator")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ecobench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ecobench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "synth": "generate a synthetic flow dataset",
        "ingest": "load, validate and normalize a flow CSV",
        "eda": "write exploratory statistics tables",
        "bench": "train, track and compare the detectors",
        "tune": "bench plus a randomized search for one family",
        "report": "rank an existing run and write plot data",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        if name == "report":
            p.add_argument("directory", nargs="?", help="run directory (default: --out)")
            p.add_argument("--out")
            continue
        _global_flags(p)
        if name == "synth":
            p.add_argument("--n", type=int)
            p.add_argument("--anomaly-fraction", type=float, dest="anomaly_fraction")
            p.add_argument("--signal-strength", type=float, dest="signal_strength")
            p.add_argument("--no-interaction", action="store_true")
        if name == "tune":
            p.add_argument("--family")
            p.add_argument("--n-iter", type=int, dest="n_iter")
            p.add_argument("--folds", type=int)
    return parser


def config_from_args(args) -> tuple[RunConfig, Path]:
    d = load_config(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.models:
        d["models"] = [m.strip() for m in args.models.split(",") if m.strip()]
    if args.dataset:
        d["dataset"] = args.dataset
    if args.exclude_sustainability:
        d["exclude_sustainability"] = True
    if args.pca_threshold is not None:
        d["pca_threshold"] = args.pca_threshold
    tracker = dict(d.get("tracker") or {})
    if args.backend:
        tracker["backend"] = args.backend
    if args.carbon_intensity is not None:
        tracker["carbon_intensity_g_per_kwh"] = args.carbon_intensity
    if tracker:
        d["tracker"] = tracker
    synth = dict(d.get("synthetic") or {})
    for key in ("n", "anomaly_fraction", "signal_strength"):
        if getattr(args, key, None) is not None:
            synth[key] = getattr(args, key)
    if getattr(args, "no_interaction", False):
        synth["interaction"] = False
    if synth:
        d["synthetic"] = synth
    search = dict(d.get("search") or {})
    for key, attr in (("family", "family"), ("n_iter", "n_iter"), ("k", "folds")):
        if getattr(args, attr, None) is not None:
            search[key] = getattr(args, attr)
    if search:
        d["search"] = search
    if args.out:
        d["out"] = args.out
    cfg = RunConfig.from_dict(d)
    return cfg, Path(os.environ.get("ECOBENCH_OUT") or cfg.out)


COMMANDS = {"synth": run_synth, "ingest": run_ingest, "eda": run_eda, "bench": run_bench, "tune": run_tune}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code if isinstance(exc.code, int) else 1
    try:
        if args.command == "report":
            directory = args.directory or os.environ.get("ECOBENCH_OUT") or args.out or RunConfig.out
            run_report(directory)
            return 0
        try:
            cfg, out = config_from_args(args)
        except (EcoBenchError, TypeError) as exc:
            raise StageFailed("config", exc if isinstance(exc, EcoBenchError) else ConfigError(str(exc))) from None
        manifest = COMMANDS[args.command](cfg, out)
        print(f"{args.command}: wrote {len(manifest['files'])} file(s) to {out}")
        return 0
    except StageFailed as exc:
        print(f"ecobench {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
