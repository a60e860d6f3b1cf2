import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harmiss.data import CalibrationError, derive_feature_groups
from harmiss.masking import (
    BUILTIN_SCENARIOS,
    REPORTED_CELL_FRACTIONS,
    MaskedDataset,
    MaskPlan,
    OutageEvent,
    OutageScenario,
    WindowTiming,
    apply_mask,
    find_sequences,
    get_scenario,
    load_scenarios,
    missing_cell_fraction,
    plan_outages,
    windows_overlapping,
    zero_fill,
)

from conftest import make_dataset

TIMING = WindowTiming()


@pytest.mark.parametrize(
    "start, dur, n, expected",
    [
        (0.0, 10.0, 20, range(0, 8)),  # windows 0..7 start before 10 s
        (0.0, 1.0, 20, range(0, 1)),
        (1.0, 0.5, 20, range(0, 2)),  # rows 0 and 1 both cover [1.0, 1.5]
        (5.0, 5.0, 20, range(2, 8)),
        (0.0, 100.0, 5, range(0, 5)),  # clipped to the recording
    ],
)
def test_windows_overlapping_examples(start, dur, n, expected):
    assert windows_overlapping(start, dur, TIMING, n) == expected


def test_zero_duration_rejected():
    with pytest.raises(ValueError):
        windows_overlapping(0.0, 0.0, TIMING, 10)
    with pytest.raises(ValueError):
        OutageEvent("Acc", 0.0)
    with pytest.raises(ValueError):
        OutageEvent("Acc", 1.0, count=0)
    with pytest.raises(ValueError):
        OutageEvent("Magnetometer", 1.0)


@settings(max_examples=200, deadline=None)
@given(start=st.floats(0, 60), dur=st.floats(0.01, 30), n=st.integers(1, 60))
def test_windows_overlapping_matches_brute_force(start, dur, n):
    expected = [i for i in range(n)
                if i * TIMING.stride_s < start + dur and i * TIMING.stride_s + TIMING.window_span_s > start]
    if not expected:
        with pytest.raises(ValueError):
            windows_overlapping(start, dur, TIMING, n)
    else:
        assert list(windows_overlapping(start, dur, TIMING, n)) == expected


def test_builtin_scenarios():
    assert list(BUILTIN_SCENARIOS) == ["S1", "S2", "S3", "S4", "S5", "S6"]
    s1 = get_scenario("S1")
    assert s1.events == (OutageEvent("Both", 1.0, 5),)
    assert get_scenario("S6").events == (OutageEvent("Gyro", 10.0, 1),)
    # targets are the reported cell percentages rescaled to rows of the group
    assert get_scenario("S3").target_row_fraction == pytest.approx(0.1491 * 561 / 345, abs=1e-6)
    assert get_scenario("S6").target_row_fraction == pytest.approx(0.0922 * 561 / 213, abs=1e-6)
    assert REPORTED_CELL_FRACTIONS["S1"] == 0.1207
    with pytest.raises(KeyError, match="S9"):
        get_scenario("S9")


def test_scenario_json_round_trip(tmp_path):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps([s.to_dict() for s in BUILTIN_SCENARIOS.values()]))
    loaded = load_scenarios(path)
    assert [s.to_dict() for s in loaded] == [s.to_dict() for s in BUILTIN_SCENARIOS.values()]
    single = {"name": "X", "events": [{"sensor": "Acc", "duration_s": 3}]}
    path.write_text(json.dumps(single))
    (x,) = load_scenarios(path)
    assert x.target_row_fraction is None and x.events[0].count == 1


def test_find_sequences():
    ds = make_dataset(np.zeros((6, 1)), activity=np.array([1, 1, 2, 2, 2, 1]),
                      subject=np.array([1, 1, 1, 1, 2, 2]))
    assert find_sequences(ds) == [(0, 2), (2, 4), (4, 5), (5, 6)]


@pytest.mark.parametrize("name", ["S1", "S2", "S3", "S4", "S5", "S6"])
def test_calibration_reaches_target(synthetic_parts, name):
    train = synthetic_parts[0]
    plan = plan_outages(get_scenario(name), train, TIMING, seed=11)
    assert abs(plan.row_fraction - plan.target_row_fraction) <= 0.01


def test_custom_target_calibration(synthetic_parts):
    sc = OutageScenario("T", [OutageEvent("Gyro", 10.0)], target_row_fraction=0.2427)
    plan = plan_outages(sc, synthetic_parts[0], TIMING, seed=0)
    assert abs(plan.row_fraction - 0.2427) <= 0.01


def test_unreachable_target_raises():
    # 3 rows: each placement moves the fraction by at least 1/3, so 0.5 is never within 0.01
    ds = make_dataset(np.zeros((3, 2)))
    sc = OutageScenario("T", [OutageEvent("Acc", 0.5)], target_row_fraction=0.5)
    with pytest.raises(CalibrationError):
        plan_outages(sc, ds, TIMING, seed=0)


def test_plan_is_deterministic(synthetic_parts):
    train = synthetic_parts[0]
    a = plan_outages(get_scenario("S1"), train, TIMING, seed=5)
    b = plan_outages(get_scenario("S1"), train, TIMING, seed=5)
    c = plan_outages(get_scenario("S1"), train, TIMING, seed=6)
    assert np.array_equal(a.acc_rows, b.acc_rows) and np.array_equal(a.gyro_rows, b.gyro_rows)
    assert not np.array_equal(a.acc_rows, c.acc_rows)


def test_records_stay_inside_their_recording(synthetic_parts):
    train = synthetic_parts[0]
    seqs = find_sequences(train)
    plan = plan_outages(get_scenario("S2"), train, TIMING, seed=2)
    covered = np.zeros(len(train), dtype=bool)
    for r in plan.records:
        a, b = seqs[r.sequence]
        assert a <= r.row_start < r.row_stop <= b
        covered[r.row_start:r.row_stop] = True
    np.testing.assert_array_equal(covered, plan.masked_rows)
    # Both-sensor scenario blanks the two groups on the same rows
    np.testing.assert_array_equal(plan.acc_rows, plan.gyro_rows)


def test_untargeted_plan_hits_every_recording(synthetic_parts):
    train = synthetic_parts[0]
    sc = OutageScenario("U", [OutageEvent("Acc", 2.0, 2)])
    plan = plan_outages(sc, train, TIMING, seed=0)
    assert not plan.gyro_rows.any()
    for a, b in find_sequences(train):
        assert plan.acc_rows[a:b].any()


def test_overlong_outage_is_shortened_with_warning():
    ds = make_dataset(np.zeros((3, 2)))  # 5.12 s recording
    sc = OutageScenario("L", [OutageEvent("Acc", 10.0)])
    plan = plan_outages(sc, ds, TIMING, seed=0)
    assert plan.acc_rows.all()
    assert plan.warnings and "shortened" in plan.warnings[0]


# -- applying masks --------------------------------------------------------


def _one_row(names):
    return make_dataset(np.ones((1, 561)), names=names)


@pytest.mark.parametrize("sensor, cells", [("Acc", 345), ("Gyro", 213), ("Both", 558)])
def test_single_row_mask_cell_counts(names, sensor, cells):
    ds = _one_row(names)
    groups = derive_feature_groups(names)
    on = np.ones(1, dtype=bool)
    off = np.zeros(1, dtype=bool)
    plan = MaskPlan(1, on if sensor in ("Acc", "Both") else off, on if sensor in ("Gyro", "Both") else off)
    masked = apply_mask(plan, groups, ds)
    assert masked.missing.sum() == cells
    assert missing_cell_fraction(masked) == pytest.approx(cells / 561)


def test_empty_plan_is_identity(names):
    ds = make_dataset(np.random.default_rng(0).normal(size=(4, 561)), names=names)
    masked = apply_mask(MaskPlan.empty(4), derive_feature_groups(names), ds)
    assert not masked.missing.any()
    assert missing_cell_fraction(masked) == 0.0
    np.testing.assert_array_equal(zero_fill(masked).features, ds.features)


def test_masked_cells_lie_in_planned_rows_and_sensor_columns(names, synthetic_parts):
    train = synthetic_parts[0]
    groups = derive_feature_groups(names)
    plan = plan_outages(get_scenario("S3"), train, TIMING, seed=1)
    m = apply_mask(plan, groups, train).missing
    rows, cols = np.nonzero(m)
    assert plan.acc_rows[rows].all()
    assert set(cols.tolist()) <= groups.acc_columns
    # the whole accelerometer group is blanked on every planned row
    assert (m.sum(axis=1)[plan.acc_rows] == 345).all()


def test_missing_cell_ratio_law(names, synthetic_parts):
    train = synthetic_parts[0]
    groups = derive_feature_groups(names)
    rows = plan_outages(get_scenario("S5"), train, TIMING, seed=4).acc_rows
    none = np.zeros_like(rows)
    f_acc = missing_cell_fraction(apply_mask(MaskPlan(len(train), rows, none), groups, train))
    f_gyro = missing_cell_fraction(apply_mask(MaskPlan(len(train), none, rows), groups, train))
    assert f_acc / f_gyro == pytest.approx(345 / 213, abs=1e-9)


def test_plan_size_mismatch(names):
    with pytest.raises(ValueError):
        apply_mask(MaskPlan.empty(2), derive_feature_groups(names), _one_row(names))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 12), d=st.integers(1, 6))
def test_zero_fill_properties(seed, n, d):
    rng = np.random.default_rng(seed)
    ds = make_dataset(rng.normal(size=(n, d)))
    masked = MaskedDataset(ds, rng.random((n, d)) < 0.4)
    filled = zero_fill(masked).features
    assert (filled[masked.missing] == 0.0).all()
    np.testing.assert_array_equal(filled[~masked.missing], ds.features[~masked.missing])
    # idempotent
    again = zero_fill(MaskedDataset(zero_fill(masked), masked.missing)).features
    np.testing.assert_array_equal(again, filled)
    assert np.isnan(masked.with_nan()[masked.missing]).all()


def test_zero_fill_example():
    ds = make_dataset([[0.3, -0.7]])
    out = zero_fill(MaskedDataset(ds, np.array([[True, False]])))
    np.testing.assert_array_equal(out.features, [[0.0, -0.7]])
