"""End-to-end acceptance checks, one test per numbered criterion."""

from __future__ import annotations

import csv
import json
import time
from fractions import Fraction

import numpy as np
import pytest

from ecobench.analysis import classification_report, roc_auc
from ecobench.cli import RunConfig, run_bench
from ecobench.dataset import generate_synthetic, validate
from ecobench.eco import EcoRow, eco_index, pareto_front, rank_by_eei
from ecobench.energy import PowerSample, TrackerConfig, integrate_energy, kg_to_g, track
from ecobench.models.logreg import gradient, loss
from ecobench.preprocess import (
    apply_scaler,
    encode,
    engineer_features,
    fit_scaler,
    pca_fit,
    pca_transform,
    smote,
    stratified_split,
)
from ecobench.tune import pca_pipeline_experiment

SEED = 7
N_FLOWS = 2300


def verdict(number: int, ok: bool, detail: str) -> None:
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


@pytest.fixture(scope="module")
def bench_runs(tmp_path_factory):
    """Two default bench runs on the seeded synthetic benchmark."""
    root = tmp_path_factory.mktemp("bench")
    cfg = RunConfig(seed=SEED, synthetic={"n": N_FLOWS, "anomaly_fraction": 0.25, "signal_strength": 1.0, "interaction": True})
    runs = []
    for name in ("a", "b"):
        t0 = time.perf_counter()
        run_bench(cfg, root / name)
        runs.append((root / name, time.perf_counter() - t0))
    return runs


@pytest.fixture(scope="module")
def prepared():
    ds = generate_synthetic(N_FLOWS, 0.25, 1.0, seed=SEED, interaction=True)
    ds, _ = validate(ds, "reject")
    fm, _ = encode(engineer_features(ds))
    sp = stratified_split(fm, 0.2, SEED)
    params = fit_scaler(sp.train)
    return apply_scaler(sp.train, params), apply_scaler(sp.test, params)


def _results(directory):
    return json.loads((directory / "results.json").read_text())


def _eco_rows(directory):
    with (directory / "eco_table.csv").open() as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ 1

def _hand_metrics(t, p):
    tp = fp = tn = fn = 0
    for a, b in zip(t, p):
        if a == 1 and b == 1:
            tp += 1
        elif a == 0 and b == 1:
            fp += 1
        elif a == 0 and b == 0:
            tn += 1
        else:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return (tp + tn) / len(t), precision, recall, f1


def _pair_auc(t, s):
    wins = Fraction(0)
    pairs = 0
    for i in range(len(t)):
        if t[i] != 1:
            continue
        for j in range(len(t)):
            if t[j] == 0:
                pairs += 1
                wins += 1 if s[i] > s[j] else Fraction(1, 2) if s[i] == s[j] else 0
    return float(wins / pairs)


def test_criterion_1_metric_oracles():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(500):
        n = int(rng.integers(2, 201))
        t = rng.integers(0, 2, n)
        t[rng.integers(n)] = 1
        t[rng.integers(n)] = 0
        if t.min() == t.max():
            t[0] = 1 - t[0]
        p = rng.integers(0, 2, n)
        s = rng.random(n) if i % 2 else rng.integers(0, 6, n).astype(float)
        r = classification_report(t, p)
        if (r.accuracy, r.precision, r.recall, r.f1) != _hand_metrics(t.tolist(), p.tolist()):
            verdict(1, False, f"metric mismatch on instance {i}")
        worst = max(worst, abs(roc_auc(t, s) - _pair_auc(t.tolist(), s.tolist())))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-9 and elapsed < 10, f"max auc error {worst:.1e}, {elapsed:.2f} s")


# ------------------------------------------------------------------ 2

def test_criterion_2_energy_integration(tmp_path):
    cfg = TrackerConfig(backend="constant_power", constant_watts=50.0, sampling_interval_ms=100)
    _, rep = track(lambda: time.sleep(2.0), cfg, "sleep", "train")
    target = 2.7778e-5
    live_ok = abs(rep.energy_kwh - target) <= 0.01 * target
    trace = tmp_path / "trace.csv"
    trace.write_text("t,watts\n0,0\n10,20\n")
    _, replay = track(lambda: None, TrackerConfig(backend="trace_replay", trace_path=str(trace)), "m", "train")
    hand = 100.0 / 3.6e6  # trapezoid: 10 s * (0 + 20) / 2 W = 100 J
    exact = replay.energy_kwh == hand and integrate_energy([PowerSample(0, 0), PowerSample(10, 20)]) == hand
    verdict(2, live_ok and exact and round(hand, 9) == target,
            f"constant {rep.energy_kwh:.6e} kWh, replay {replay.energy_kwh!r}")


# ------------------------------------------------------------------ 3

def test_criterion_3_emissions_arithmetic(bench_runs):
    g = kg_to_g(5.53e-5)
    conversion_ok = abs(g - 0.0553) <= 1e-12 * 0.0553
    worst = 0.0
    count = 0
    for directory, _ in bench_runs:
        for rep in _results(directory)["nondeterministic"]["energy"]:
            expected = rep["energy_kwh"] * rep["carbon_intensity_g_per_kwh"]
            worst = max(worst, abs(rep["emissions_g"] - expected) / max(abs(expected), 1e-300))
            count += 1
    verdict(3, conversion_ok and worst <= 1e-12 and count == 20, f"{g!r} g, {count} reports, max rel error {worst:.1e}")


# ------------------------------------------------------------------ 4

def test_criterion_4_smote_contract(prepared):
    train, _ = prepared
    out = smote(train, k=5, seed=SEED)
    counts = np.bincount(out.labels)
    minority = int(np.argmin(np.bincount(train.labels)))
    pts = train.values[train.labels == minority]
    synthetic = out.values[len(train):]
    # exhaustive neighbor recomputation, ties at the k-th distance included
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    kth = np.sort(d, axis=1)[:, 4]
    a_idx, b_idx = np.nonzero(d <= kth[:, None] + 1e-12)
    a, seg = pts[a_idx], pts[b_idx] - pts[a_idx]
    length = (seg * seg).sum(1)
    worst = 0.0
    for s in synthetic:
        lam = np.clip(((s - a) * seg).sum(1) / np.where(length > 0, length, 1.0), 0.0, 1.0)
        gap = np.sqrt(((a + lam[:, None] * seg - s) ** 2).sum(1)).min()
        worst = max(worst, gap / max(1.0, np.abs(s).max()))
    originals_kept = np.array_equal(out.values[: len(train)], train.values)
    verdict(4, counts[0] == counts[1] and worst <= 1e-9 and originals_kept and len(synthetic) > 0,
            f"counts {counts.tolist()}, {len(synthetic)} synthetic, max distance {worst:.1e}")


# ------------------------------------------------------------------ 5

def test_criterion_5_pca_contract(prepared):
    train, _ = prepared
    p = pca_fit(train, 0.9)
    k = p.n_components
    X = train.values
    centered = X - X.mean(axis=0)
    ref = np.sort(np.linalg.eigvalsh(centered.T @ centered / len(X)))[::-1]
    ref = np.maximum(ref, 0.0)
    ratio_k = ref[:k].sum() / ref.sum()
    ratio_km1 = ref[: k - 1].sum() / ref.sum()
    gram = p.components.T @ p.components
    ortho = np.abs(gram - np.eye(k)).max()
    z = pca_transform(p, train).values
    mse = ((p.reconstruct(z) - X) ** 2).sum(axis=1).mean()
    discarded = ref[k:].sum()
    ok = (
        p.retained_variance_ratio >= 0.9
        and ratio_k >= 0.9
        and ratio_km1 < 0.9
        and abs(p.retained_variance_ratio - ratio_k) <= 1e-9
        and ortho <= 1e-8
        and abs(mse - discarded) <= 1e-6
    )
    verdict(5, ok, f"k={k}, ratio {ratio_k:.4f} (k-1: {ratio_km1:.4f}), orthogonality {ortho:.1e}, "
                   f"mse {mse:.6f} vs {discarded:.6f}")


# ------------------------------------------------------------------ 6

def test_criterion_6_qualitative_reproduction(bench_runs, prepared):
    t0 = time.perf_counter()
    train, test = prepared
    cmp = pca_pipeline_experiment(train, test, "random_forest", 0.9, seed=SEED,
                                  tracker_cfg=TrackerConfig(backend="constant_power"), repeats=3)
    directory, bench_seconds = bench_runs[0]
    m = _results(directory)["deterministic"]["models"]
    f1 = {name: m[name]["metrics"]["f1"] for name in m}
    if_auc = m["isolation_forest"]["metrics"]["roc_auc"]
    full_e = cmp.full.train.energy_kwh + cmp.full.inference.energy_kwh
    pca_e = cmp.reduced.train.energy_kwh + cmp.reduced.inference.energy_kwh
    elapsed = bench_seconds + time.perf_counter() - t0
    checks = {
        "rf f1": f1["random_forest"] >= 0.85,
        "gbt f1": f1["gbt"] >= 0.85,
        "logreg below trees": f1["logreg"] < min(f1["random_forest"], f1["gbt"]),
        "iforest auc": if_auc > 0.6,
        "pca energy": pca_e < full_e,
        "pca train time": cmp.reduced.train.duration_s < cmp.full.train.duration_s,
        "pca f1": abs(cmp.delta_f1) <= 0.05,
        "runtime": elapsed < 300,
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(6, not failed,
            f"rf {f1['random_forest']:.3f}, gbt {f1['gbt']:.3f}, lr {f1['logreg']:.3f}, if auc {if_auc:.3f}, "
            f"pca k={cmp.n_components} df1 {cmp.delta_f1:+.3f}, train {cmp.reduced.train.duration_s:.2f}"
            f" vs {cmp.full.train.duration_s:.2f} s, {elapsed:.0f} s total; failed {failed}")


# ------------------------------------------------------------------ 7

def _long_form_rank(rows, eps):
    keyed = []
    for r in rows:
        energy = float(r["train_energy_kwh"]) + float(r["infer_energy_kwh"])
        keyed.append((-(float(r["f1"]) / (energy + eps)), float(r["total_energy_kwh"]), r["model"]))
    return [k[2] for k in sorted(keyed)]


def test_criterion_7_eei(bench_runs):
    rank_ok = True
    for directory, _ in bench_runs:
        rows = _eco_rows(directory)
        eps = _results(directory)["deterministic"]["config"]["eps"]
        eco_rows = [
            EcoRow(r["model"], float(r["accuracy"]), float(r["f1"]), None, float(r["train_energy_kwh"]),
                   float(r["infer_energy_kwh"]), float(r["total_energy_kwh"]), float(r["total_emissions_g"]),
                   float(r["eei"]))
            for r in rows
        ]
        want = _long_form_rank(rows, eps)
        rank_ok &= rank_by_eei(eco_rows) == want
        rank_ok &= _results(directory)["nondeterministic"]["eco"]["ranking"] == want
    got = eco_index(0.6151, 2.73e-11, eps=1e-12)
    # 0.6151 / (2.73e-11 + 0.1e-11) = 0.6151 / 2.83e-11, worked as an exact fraction
    exact = Fraction(6151, 10**4) / Fraction(283, 10**13)
    rel = abs(Fraction(got) - exact) / exact
    verdict(7, rank_ok and rel <= Fraction(1, 10**9), f"spot check {got!r}, rel error {float(rel):.1e}")


# ------------------------------------------------------------------ 8

def _dominated(r, rows):
    return any(
        o.f1 >= r.f1 and o.total_energy_kwh <= r.total_energy_kwh
        and (o.f1 > r.f1 or o.total_energy_kwh < r.total_energy_kwh)
        for o in rows
    )


def test_criterion_8_pareto():
    rng = np.random.default_rng(8)
    mismatches = 0
    for t in range(200):
        grid = t % 2 == 0  # half the tables use coarse values to force ties
        f1 = np.round(rng.random(10), 1) if grid else rng.random(10)
        energy = np.round(rng.random(10) * 4, 0) + 1 if grid else rng.random(10) * 1e-6
        rows = [EcoRow(f"m{i}", 0.0, float(f1[i]), None, 0.0, float(energy[i]), float(energy[i]), 0.0, 0.0)
                for i in range(10)]
        want = sorted((r for r in rows if not _dominated(r, rows)), key=lambda r: (r.total_energy_kwh, -r.f1, r.model))
        got = pareto_front(rows)
        if sorted(r.model for r in got) != sorted(r.model for r in want) or \
                [r.total_energy_kwh for r in got] != [r.total_energy_kwh for r in want]:
            mismatches += 1
    verdict(8, mismatches == 0, f"{mismatches} of 200 tables differ from the exhaustive oracle")


# ------------------------------------------------------------------ 9

def test_criterion_9_determinism(bench_runs):
    (a, _), (b, _) = bench_runs
    same_results = _results(a)["deterministic"] == _results(b)["deterministic"]
    cols = ["model", "accuracy", "f1", "roc_auc"]
    same_table = [[r[c] for c in cols] for r in _eco_rows(a)] == [[r[c] for c in cols] for r in _eco_rows(b)]
    verdict(9, same_results and same_table and len(_eco_rows(a)) == 5,
            f"deterministic sections equal: {same_results}, metric columns equal: {same_table}")


# ------------------------------------------------------------------ 10

def test_criterion_10_gradient_check():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(60, 6))
    y = (rng.random(60) < 0.35).astype(float)
    worst = 0.0
    for _ in range(20):
        w, b = rng.normal(size=6), float(rng.normal())
        l2 = float(rng.choice([0.0, 1e-4, 0.1]))
        gw, gb = gradient(w, b, X, y, l2)
        h = 1e-6
        fd_w = [(loss(w + h * e, b, X, y, l2) - loss(w - h * e, b, X, y, l2)) / (2 * h) for e in np.eye(6)]
        fd_b = (loss(w, b + h, X, y, l2) - loss(w, b - h, X, y, l2)) / (2 * h)
        ana, fd = np.append(gw, gb), np.append(fd_w, fd_b)
        worst = max(worst, np.linalg.norm(ana - fd) / max(np.linalg.norm(fd), 1e-12))
    verdict(10, worst <= 1e-5, f"max relative error {worst:.1e} over 20 points")
