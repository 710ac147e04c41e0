from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecobench.dataset import (
    BOUNDS,
    CANONICAL_COLUMNS,
    Dataset,
    FlowRecord,
    generate_synthetic,
    load_csv,
    validate,
    write_csv,
)
from ecobench.errors import ParameterError, ParseError, SchemaError, ValidationError


def pairwise_auc(y, s):
    pos = s[y == 1]
    neg = s[y == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def _replace(ds, col, i, value):
    cols = {k: v.copy() for k, v in ds.columns.items()}
    cols[col][i] = value
    return Dataset(cols, ds.source)


def test_three_row_file_loads_three_records(tmp_path, flows):
    p = write_csv(flows.take([0, 1, 2]), tmp_path / "three.csv")
    ds = load_csv(p)
    assert len(ds) == 3
    assert len(ds.records()) == 3


def test_missing_status_column_is_a_schema_error(tmp_path, flows):
    p = tmp_path / "nostatus.csv"
    lines = write_csv(flows.take([0, 1]), tmp_path / "full.csv").read_text().splitlines()
    header = lines[0].split(",")
    j = header.index("status")
    p.write_text("\n".join(",".join(c for i, c in enumerate(l.split(",")) if i != j) for l in lines) + "\n")
    with pytest.raises(SchemaError, match="status"):
        load_csv(p)


def test_mapping_renames_external_columns(tmp_path, flows):
    text = write_csv(flows.take([0, 1, 2]), tmp_path / "a.csv").read_text()
    p = tmp_path / "b.csv"
    p.write_text(text.replace("cpu_util", "CPU_Usage", 1))
    with pytest.raises(SchemaError):
        load_csv(p)
    ds = load_csv(p, {"CPU_Usage": "cpu_util"})
    np.testing.assert_array_equal(ds["cpu_util"], flows["cpu_util"][:3])


def test_unparseable_cell_reports_row_and_column(tmp_path, flows):
    lines = write_csv(flows.take([0, 1, 2]), tmp_path / "a.csv").read_text().splitlines()
    header = lines[0].split(",")
    cells = lines[2].split(",")
    cells[header.index("byte_count")] = "lots"
    lines[2] = ",".join(cells)
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_csv(p)
    assert err.value.problems[0][1:] == ("byte_count", "lots")
    assert err.value.problems[0][0] == 1


def test_csv_round_trip_is_bit_exact(tmp_path, flows):
    back = load_csv(write_csv(flows, tmp_path / "rt.csv"))
    assert back.equals(flows)
    for c in CANONICAL_COLUMNS:
        assert back[c].dtype.kind == flows[c].dtype.kind


def test_drop_row_removes_bad_port():
    ds = generate_synthetic(50, 0.2, 1.0, seed=1)
    bad = _replace(ds, "dst_port", 7, 70000)
    out, rep = validate(bad, "drop-row")
    assert len(out) == 49
    assert rep.total_violations == 1
    assert rep.dropped_rows == [7]
    assert rep.retained_rows + len(rep.dropped_rows) == rep.input_rows


def test_clamp_pue_to_one():
    ds = generate_synthetic(50, 0.2, 1.0, seed=1)
    out, rep = validate(_replace(ds, "pue", 3, 0.8), "clamp")
    assert rep.total_violations == 1
    assert out["pue"][3] == 1.0
    assert len(out) == 50


def test_clean_dataset_passes_unchanged():
    ds = generate_synthetic(200, 0.3, 1.0, seed=5)
    out, rep = validate(ds, "reject")
    assert rep.total_violations == 0
    assert out.equals(ds)


def test_reject_raises_with_report():
    ds = generate_synthetic(50, 0.2, 1.0, seed=1)
    with pytest.raises(ValidationError) as err:
        validate(_replace(ds, "payload_entropy", 0, 9.0), "reject")
    assert err.value.report.total_violations == 1


def test_status_outside_binary_cannot_be_clamped():
    ds = generate_synthetic(50, 0.2, 1.0, seed=1)
    out, rep = validate(_replace(ds, "status", 4, 2), "clamp")
    assert rep.dropped_rows == [4]
    assert len(out) == 49


def test_exact_anomaly_count():
    for seed in range(3):
        ds = generate_synthetic(1000, 0.1, 1.0, seed=seed)
        assert int(ds["status"].sum()) == 100


def test_generator_is_deterministic(tmp_path):
    a = write_csv(generate_synthetic(300, 0.25, 1.0, seed=9, interaction=True), tmp_path / "a.csv")
    b = write_csv(generate_synthetic(300, 0.25, 1.0, seed=9, interaction=True), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
def test_invalid_fraction_rejected(fraction):
    with pytest.raises(ParameterError):
        generate_synthetic(100, fraction, 1.0, seed=0)


def test_too_few_rows_rejected():
    with pytest.raises(ParameterError):
        generate_synthetic(9, 0.2, 1.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_zero_signal_power_is_uninformative(seed):
    ds = generate_synthetic(2000, 0.25, 0.0, seed=seed)
    auc = pairwise_auc(ds["status"], ds["power_consumption_watts"])
    assert abs(auc - 0.5) <= 0.05


def test_signal_raises_power_of_anomalies():
    ds = generate_synthetic(2000, 0.25, 1.0, seed=0)
    y = ds["status"]
    assert pairwise_auc(y, ds["power_consumption_watts"]) > 0.6
    assert ds["cpu_util"][y == 1].mean() > ds["cpu_util"][y == 0].mean()


@given(
    n=st.integers(10, 120),
    fraction=st.floats(0.05, 0.95),
    signal=st.floats(0.0, 3.0),
    seed=st.integers(0, 2**32 - 1),
    interaction=st.booleans(),
)
def test_generated_data_always_validates(n, fraction, signal, seed, interaction):
    ds = generate_synthetic(n, fraction, signal, seed=seed, interaction=interaction)
    _, rep = validate(ds, "reject")
    assert rep.total_violations == 0
    assert int(ds["status"].sum()) == int(np.floor(n * fraction + 0.5))  # half rounds up


@given(st.data())
def test_drop_row_output_never_violates(data):
    ds = generate_synthetic(30, 0.3, 1.0, seed=data.draw(st.integers(0, 1000)))
    cols = {k: v.copy() for k, v in ds.columns.items()}
    for _ in range(data.draw(st.integers(1, 6))):
        col = data.draw(st.sampled_from(sorted(BOUNDS)))
        i = data.draw(st.integers(0, 29))
        if cols[col].dtype.kind == "f":
            cols[col][i] = data.draw(st.sampled_from([np.nan, np.inf, -5.0, 1e9]))
        else:
            cols[col][i] = data.draw(st.sampled_from([-3, 10**6]))
    out, rep = validate(Dataset(cols), "drop-row")
    assert rep.retained_rows + len(rep.dropped_rows) == 30
    _, again = validate(out, "reject")
    assert again.total_violations == 0


def test_records_round_trip(flows):
    recs = flows.take(np.arange(5)).records()
    assert isinstance(recs[0], FlowRecord)
    assert Dataset.from_records(recs).equals(flows.take(np.arange(5)))
