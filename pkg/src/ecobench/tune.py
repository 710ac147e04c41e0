"""Stratified k-fold CV, randomized hyperparameter search, and the PCA experiment."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .analysis import MetricsRow, classification_report, roc_auc
from .energy import EnergyReport, TrackerConfig, track
from .errors import EcoBenchError, ParameterError, StratificationError, UndefinedMetricError
from .models.base import Hyperparams
from .preprocess import FeatureMatrix, apply_scaler, fit_scaler, pca_fit, pca_transform, smote

# ---------------------------------------------------------------- search spaces


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int  # inclusive

    def __post_init__(self):
        if self.lo > self.hi:
            raise ParameterError(f"empty integer range [{self.lo}, {self.hi}]")

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.lo, self.hi + 1))

    def contains(self, v) -> bool:
        return isinstance(v, (int, np.integer)) and self.lo <= v <= self.hi

    def values(self) -> list:
        return list(range(self.lo, self.hi + 1))


@dataclass(frozen=True)
class RealRange:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ParameterError(f"empty real range [{self.lo}, {self.hi}]")

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.lo, self.hi))

    def contains(self, v) -> bool:
        return self.lo <= v <= self.hi


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 < self.lo <= self.hi:
            raise ParameterError(f"log-uniform bounds must satisfy 0 < lo <= hi, got [{self.lo}, {self.hi}]")

    def sample(self, rng: np.random.Generator) -> float:
        v = math.exp(rng.uniform(math.log(self.lo), math.log(self.hi)))
        return min(self.hi, max(self.lo, v))

    def contains(self, v) -> bool:
        return self.lo <= v <= self.hi


@dataclass(frozen=True)
class Choice:
    options: tuple

    def __post_init__(self):
        if len(self.options) == 0:
            raise ParameterError("categorical choice needs at least one option")

    def sample(self, rng: np.random.Generator):
        v = self.options[int(rng.integers(len(self.options)))]
        return v.item() if isinstance(v, np.generic) else v

    def contains(self, v) -> bool:
        return v in self.options

    def values(self) -> list:
        return list(self.options)


@dataclass(frozen=True)
class SearchSpace:
    rules: dict

    def __post_init__(self):
        for k, r in self.rules.items():
            if not isinstance(r, (IntRange, RealRange, LogUniform, Choice)):
                raise ParameterError(f"unsupported sampling rule for {k!r}: {r!r}")

    @property
    def finite(self) -> bool:
        return all(isinstance(r, (IntRange, Choice)) for r in self.rules.values())

    def grid(self) -> list[dict]:
        """Every configuration of a finite space, in key-sorted product order."""
        if not self.finite:
            raise ParameterError("only spaces of integer ranges and choices can be enumerated")
        keys = sorted(self.rules)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.rules[k].values() for k in keys))]

    def size(self) -> float:
        if not self.finite:
            return math.inf
        return math.prod(len(self.rules[k].values()) for k in self.rules)

    def contains(self, config: dict) -> bool:
        return all(self.rules[k].contains(config[k]) for k in self.rules)

    def sample(self, n: int, rng: np.random.Generator) -> list[dict]:
        """``n`` configurations; a finite space is drawn without replacement
        and yields at most its size."""
        if n < 1:
            raise ParameterError(f"n_iter must be >= 1, got {n}")
        keys = sorted(self.rules)
        if self.finite:
            grid = self.grid()
            return [grid[i] for i in rng.permutation(len(grid))[: min(n, len(grid))]]
        return [{k: self.rules[k].sample(rng) for k in keys} for _ in range(n)]

    @classmethod
    def from_dict(cls, d: dict) -> SearchSpace:
        """Parse ``{"name": {"int": [lo, hi]} | {"real": ...} | {"log": ...} | {"choice": [...]}}``."""
        kinds = {"int": IntRange, "real": RealRange, "log": LogUniform}
        rules = {}
        for k, spec in d.items():
            if not isinstance(spec, dict) or len(spec) != 1:
                raise ParameterError(f"search rule for {k!r} must be a one-key object, got {spec!r}")
            (kind, arg), = spec.items()
            if kind == "choice":
                rules[k] = Choice(tuple(arg))
            elif kind in kinds:
                rules[k] = kinds[kind](*arg)
            else:
                raise ParameterError(f"unknown search rule kind {kind!r} for {k!r}")
        return cls(rules)


DEFAULT_SPACES = {
    "random_forest": SearchSpace(
        {"n_trees": IntRange(50, 300), "max_depth": IntRange(4, 20), "min_samples_split": IntRange(2, 10)}
    ),
    "gbt": SearchSpace({"eta": LogUniform(0.01, 0.3), "max_depth": IntRange(2, 8), "n_rounds": IntRange(50, 300)}),
}


# ----------------------------------------------------------------- cross-validation

def stratified_kfold(y, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per sample; each class is shuffled and dealt round-robin.

    The dealing position carries over from one class to the next, so overall
    fold sizes also differ by at most one.
    """
    y = np.asarray(y)
    if k < 2:
        raise ParameterError(f"k must be >= 2, got {k}")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    start = 0
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        if len(idx) < k:
            raise StratificationError(f"class {cls} has {len(idx)} member(s), fewer than k={k} folds")
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = (start + np.arange(len(idx))) % k
        start = (start + len(idx)) % k
    return folds


def prepare_fold(train: FeatureMatrix, evaluation: FeatureMatrix, seed: int, smote_k: int = 5, rebalance: bool = True):
    """Scale with training-fold statistics and oversample the training fold.

    The evaluation rows are only ever transformed, never fitted on.
    """
    params = fit_scaler(train)
    tr = apply_scaler(train, params)
    ev = apply_scaler(evaluation, params)
    if rebalance:
        tr = smote(tr, smote_k, seed)
    return tr, ev


@dataclass
class CVResult:
    iter: int
    hyperparams: Hyperparams
    fold_f1s: list[float]
    mean_f1: float
    rank: int = 0
    failed: bool = False
    error: str | None = None


def cross_validate(family: str, hp: Hyperparams, m: FeatureMatrix, folds: np.ndarray, seed: int, smote_k: int = 5) -> list[float]:
    f1s = []
    for f in range(int(folds.max()) + 1):
        tr, ev = prepare_fold(
            m.take(np.flatnonzero(folds != f)),
            m.take(np.flatnonzero(folds == f)),
            seed + f,
            smote_k,
            rebalance=family != "isolation_forest",
        )
        model = models.train(family, tr.values, tr.labels, hp)
        f1s.append(classification_report(ev.labels, models.predict(model, ev.values)).f1)
    return f1s


def random_search(
    family: str,
    space: SearchSpace,
    m: FeatureMatrix,
    n_iter: int,
    k: int = 5,
    seed: int = 0,
    *,
    base: dict | None = None,
    smote_k: int = 5,
) -> tuple[Hyperparams, list[CVResult]]:
    """Score sampled configurations by mean out-of-fold F1.

    Rows of ``m`` are unscaled; scaling and SMOTE are fitted inside each
    training fold. A configuration whose training fails scores 0 and is
    flagged. The best is the highest mean F1, earliest sample on ties.
    """
    unknown = set(space.rules) - set(models.DEFAULTS.get(family, {}))
    if family not in models.DEFAULTS or unknown:
        raise ParameterError(f"search space does not fit family {family!r}: unknown keys {sorted(unknown)}")
    rng = np.random.default_rng(seed)
    configs = space.sample(n_iter, rng)
    folds = stratified_kfold(m.labels, k, seed)
    results = []
    for i, cfg in enumerate(configs):
        hp = Hyperparams.make(family, {**(base or {}), **cfg}, seed)
        try:
            f1s = cross_validate(family, hp, m, folds, seed, smote_k)
            results.append(CVResult(i, hp, f1s, float(np.mean(f1s))))
        except (EcoBenchError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            results.append(CVResult(i, hp, [0.0] * k, 0.0, failed=True, error=f"{type(exc).__name__}: {exc}"))
    order = sorted(range(len(results)), key=lambda i: (-results[i].mean_f1, i))
    for r, i in enumerate(order, start=1):
        results[i].rank = r
    return results[order[0]].hyperparams, results


def write_cv_csv(results, out_dir: str | Path, name: str = "cv_results.csv") -> Path:
    path = Path(out_dir) / name
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "hyperparams", "fold_f1s", "mean_f1", "rank"])
        for r in results:
            w.writerow([r.iter, r.hyperparams.canonical(), ";".join(repr(float(x)) for x in r.fold_f1s), repr(r.mean_f1), r.rank])
    return path


# ----------------------------------------------------------------- PCA experiment

@dataclass
class ArmResult:
    metrics: MetricsRow
    train: EnergyReport
    inference: EnergyReport
    n_features: int


@dataclass
class PCAComparison:
    full: ArmResult
    reduced: ArmResult
    threshold: float
    n_components: int
    retained_variance_ratio: float
    repeats: int = 1
    train_durations: dict = field(default_factory=dict)

    @property
    def delta_f1(self) -> float:
        return self.reduced.metrics.f1 - self.full.metrics.f1

    @property
    def delta_energy_kwh(self) -> float:
        return (self.reduced.train.energy_kwh + self.reduced.inference.energy_kwh) - (
            self.full.train.energy_kwh + self.full.inference.energy_kwh
        )

    @property
    def delta_train_seconds(self) -> float:
        return self.reduced.train.duration_s - self.full.train.duration_s


def _median_index(values) -> int:
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    return order[(len(order) - 1) // 2]


def evaluate(model, test: FeatureMatrix, name: str) -> MetricsRow:
    scores = models.score(model, test.values)
    row = classification_report(test.labels, models.predict(model, test.values), model=name)
    try:
        row.roc_auc = roc_auc(test.labels, scores)
    except UndefinedMetricError:
        row.roc_auc = None
    return row


def pca_pipeline_experiment(
    train: FeatureMatrix,
    test: FeatureMatrix,
    family: str = "random_forest",
    threshold: float = 0.9,
    seed: int = 0,
    tracker_cfg: TrackerConfig | None = None,
    *,
    hp=None,
    smote_k: int = 5,
    repeats: int = 1,
    label: str | None = None,
) -> PCAComparison:
    """Train ``family`` on full and on PCA-reduced features under tracking.

    ``train`` and ``test`` are already standardized. The reduced arm's
    training phase includes fitting and applying the projection, and its
    inference phase includes projecting the test rows. With ``repeats`` > 1
    the two arms alternate and each reports its median-duration run.
    """
    if repeats < 1:
        raise ParameterError(f"repeats must be >= 1, got {repeats}")
    cfg = tracker_cfg or TrackerConfig()
    name = label or family
    rebalance = family != "isolation_forest"

    def fit_full():
        tr = smote(train, smote_k, seed) if rebalance else train
        return models.train(family, tr.values, tr.labels, hp, seed)

    def fit_reduced():
        p = pca_fit(train, threshold)
        z = pca_transform(p, train)
        z = smote(z, smote_k, seed) if rebalance else z
        return p, models.train(family, z.values, z.labels, hp, seed)

    runs = {"full": [], "pca": []}
    for _ in range(repeats):
        runs["full"].append(track(fit_full, cfg, name, "train"))
        runs["pca"].append(track(fit_reduced, cfg, f"{name}_pca", "train"))
    durations = {k: [r.duration_s for _, r in v] for k, v in runs.items()}
    full_model, full_train = runs["full"][_median_index(durations["full"])]
    (proj, pca_model), pca_train = runs["pca"][_median_index(durations["pca"])]

    infer = {"full": [], "pca": []}
    for _ in range(repeats):
        infer["full"].append(track(lambda: models.score(full_model, test.values), cfg, name, "inference"))
        infer["pca"].append(
            track(lambda: models.score(pca_model, pca_transform(proj, test).values), cfg, f"{name}_pca", "inference")
        )
    full_inf = infer["full"][_median_index([r.duration_s for _, r in infer["full"]])][1]
    pca_inf = infer["pca"][_median_index([r.duration_s for _, r in infer["pca"]])][1]

    reduced_test = pca_transform(proj, test)
    return PCAComparison(
        full=ArmResult(evaluate(full_model, test, name), full_train, full_inf, train.values.shape[1]),
        reduced=ArmResult(evaluate(pca_model, reduced_test, f"{name}_pca"), pca_train, pca_inf, proj.n_components),
        threshold=threshold,
        n_components=proj.n_components,
        retained_variance_ratio=proj.retained_variance_ratio,
        repeats=repeats,
        train_durations=durations,
    )


# ------------------------------------------------------------ redundant features

def redundant_features(
    n: int,
    n_informative: int = 8,
    n_redundant: int = 12,
    seed: int = 0,
    *,
    noise: float = 0.2,
    positive_fraction: float = 0.3,
) -> FeatureMatrix:
    """Informative Gaussian columns plus noisy, sign-flipped copies of them.

    Redundant column j copies informative column ``j % n_informative``; the
    copy noise grows with the source index so each cluster has its own
    correlation strength and principal axes do not mix clusters. The label
    thresholds the sum of the first half of the informative columns.
    """
    if n_informative < 2:
        raise ParameterError("need at least 2 informative features")
    rng = np.random.default_rng(seed)
    z = rng.normal(0.0, 1.0, (n, n_informative))
    src = np.arange(n_redundant) % n_informative
    level = noise * (1.0 + 3.0 * src / n_informative)
    red = z[:, src] * rng.choice([-1.0, 1.0], n_redundant) + level * rng.normal(0.0, 1.0, (n, n_redundant))
    s = z[:, : n_informative // 2].sum(axis=1) / math.sqrt(n_informative // 2) + 0.1 * rng.normal(0.0, 1.0, n)
    y = (s > np.quantile(s, 1.0 - positive_fraction)).astype(np.int64)
    cols = [f"inf{i + 1}" for i in range(n_informative)] + [f"red{i + 1}" for i in range(n_redundant)]
    return FeatureMatrix(np.hstack([z, red]), y, cols)
