import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from annensemble.cli import DATA_DIR
from annensemble.series import (ErrorTriple, SeriesError, SplitSpec, TimeSeries, TransformSpec,
                                apply_transform, invert_transform, load_csv, metrics, split,
                                window)

positive = arrays(np.float64, st.integers(1, 40),
                  elements=st.floats(1e-6, 1e6, allow_nan=False, allow_infinity=False))
finite = arrays(np.float64, st.integers(2, 40),
                elements=st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False))


# -- loading ------------------------------------------------------------------

def test_load_plain_rows(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("1\n2\n3")
    ts = load_csv(f)
    assert ts.values.tolist() == [1.0, 2.0, 3.0]
    assert ts.name == "x"
    assert ts.transform_log == ()


def test_load_header_date_column_crlf_and_trailing_blank(tmp_path):
    f = tmp_path / "dated.csv"
    f.write_bytes(b"date,value\r\n2000-01,1.5\r\n2000-02,2.5\r\n\r\n")
    assert load_csv(f).values.tolist() == [1.5, 2.5]


def test_load_reports_bad_row(tmp_path):
    f = tmp_path / "bad.csv"
    f.write_text("1\nabc\n3\n")
    with pytest.raises(SeriesError, match="row 2"):
        load_csv(f)


@pytest.mark.parametrize("text, msg", [
    ("1\n\n2\n", "blank row"),
    ("value\n", "no observations"),
    ("1\ninf\n", "non-finite"),
])
def test_load_rejects(tmp_path, text, msg):
    f = tmp_path / "x.csv"
    f.write_text(text)
    with pytest.raises(SeriesError, match=msg):
        load_csv(f)


def test_load_missing_file(tmp_path):
    with pytest.raises(SeriesError, match="no such file"):
        load_csv(tmp_path / "nope.csv")


@pytest.mark.parametrize("name, n", [("lynx", 114), ("sunspot", 288), ("airline", 144)])
def test_bundled_dataset_sizes(name, n):
    assert len(load_csv(DATA_DIR / f"{name}.csv")) == n


def test_timeseries_is_immutable():
    ts = TimeSeries([1.0, 2.0])
    with pytest.raises(ValueError):
        ts.values[0] = 5.0
    with pytest.raises(SeriesError):
        TimeSeries([])
    with pytest.raises(SeriesError):
        TimeSeries([1.0, np.nan])


# -- transforms ---------------------------------------------------------------

def test_log10_exact_powers():
    out = apply_transform(TimeSeries([1, 10, 100]), TransformSpec("log10"))
    assert out.values.tolist() == [0.0, 1.0, 2.0]
    assert out.transform_log == (TransformSpec("log10"),)


def test_rescale_endpoints_and_midpoint():
    spec = TransformSpec("rescale", 0.0, 10.0, 0.0, 1.0)
    assert apply_transform(TimeSeries([0, 5, 10]), spec).values.tolist() == [0.0, 0.5, 1.0]


def test_inverse_log10():
    spec = TransformSpec("log10")
    ts = TimeSeries([0.0, 1.0, 2.0], transform_log=(spec,))
    np.testing.assert_allclose(invert_transform(ts, spec).values, [1, 10, 100], rtol=1e-15)


def test_transform_errors():
    with pytest.raises(SeriesError, match="positive"):
        apply_transform(TimeSeries([1.0, 0.0]), TransformSpec("log10"))
    with pytest.raises(SeriesError, match="zero-width"):
        TransformSpec("rescale", 3.0, 3.0)
    with pytest.raises(SeriesError, match="empty"):
        invert_transform(TimeSeries([1.0]), TransformSpec("log10"))
    ts = apply_transform(TimeSeries([1.0, 2.0]), TransformSpec("log10"))
    with pytest.raises(SeriesError, match="last applied"):
        invert_transform(ts, TransformSpec("rescale", 0, 1))


def test_rescale_round_trip_random():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(scale=rng.uniform(0.1, 100), size=30)
        spec = TransformSpec.rescale_from(x, *sorted(rng.uniform(-2, 2, size=2)))
        back = invert_transform(apply_transform(TimeSeries(x), spec), spec).values
        assert np.max(np.abs(back - x)) < 1e-12 * max(1.0, np.max(np.abs(x)))


@given(positive)
def test_round_trip_property(x):
    ts = TimeSeries(x)
    specs = [TransformSpec("log10"), TransformSpec.rescale_from(x, -1, 1)
             if np.ptp(x) > 0 else TransformSpec("rescale", 0.0, 1.0)]
    for spec in specs:
        back = invert_transform(apply_transform(ts, spec), spec).values
        np.testing.assert_allclose(back, x, rtol=1e-10, atol=1e-13 * np.ptp(x))


def test_raw_replays_log():
    x = np.array([3.0, 30.0, 7.0])
    ts = apply_transform(TimeSeries(x), TransformSpec("log10"))
    ts = apply_transform(ts, TransformSpec.rescale_from(ts.values))
    np.testing.assert_allclose(ts.raw(), x, rtol=1e-13)


# -- split / window -----------------------------------------------------------

def test_split_small():
    a, b, c = split(TimeSeries([1, 2, 3, 4, 5]), SplitSpec(3, 1, 1))
    assert (a.values.tolist(), b.values.tolist(), c.values.tolist()) == ([1, 2, 3], [4], [5])


def test_split_lynx_lengths():
    parts = split(load_csv(DATA_DIR / "lynx.csv"), SplitSpec(80, 20, 14))
    assert [len(p) for p in parts] == [80, 20, 14]


def test_split_length_mismatch():
    with pytest.raises(SeriesError, match="5 values"):
        split(TimeSeries([1, 2, 3, 4, 5]), SplitSpec(3, 2, 1))
    with pytest.raises(SeriesError):
        SplitSpec(0, 1, 1)


@given(finite, st.data())
def test_split_concatenation(x, data):
    n = x.size
    if n < 3:
        return
    a = data.draw(st.integers(1, n - 2))
    b = data.draw(st.integers(1, n - a - 1))
    parts = split(TimeSeries(x), SplitSpec(a, b, n - a - b))
    np.testing.assert_array_equal(np.concatenate([p.values for p in parts]), x)


def test_window_enumeration():
    ps = window(TimeSeries([1, 2, 3, 4, 5]), 2, 1)
    assert ps.inputs.tolist() == [[1, 2], [2, 3], [3, 4]]
    assert ps.targets.ravel().tolist() == [3, 4, 5]


def test_window_seasonal_blocks():
    ps = window(TimeSeries([1, 2, 3, 4, 5, 6]), 2, 2)
    assert len(ps) == 3
    assert ps.targets.tolist() == [[3, 4], [4, 5], [5, 6]]


def test_window_lynx_training_count():
    train = split(load_csv(DATA_DIR / "lynx.csv"), SplitSpec(80, 20, 14))[0]
    assert len(window(train, 7)) == 73


def test_window_too_short():
    with pytest.raises(SeriesError, match="too short"):
        window(TimeSeries([1, 2]), 2, 1)


@given(finite, st.integers(1, 6))
def test_window_count_and_overlap(x, p):
    if x.size < p + 1:
        return
    ps = window(TimeSeries(x), p)
    assert len(ps) == x.size - p
    np.testing.assert_array_equal(ps.targets.ravel(), x[p:])
    np.testing.assert_array_equal(ps.inputs[1:, :-1], ps.inputs[:-1, 1:])


# -- metrics ------------------------------------------------------------------

def test_metrics_identity():
    assert metrics([1, 2, 3], [1, 2, 3]) == ErrorTriple(0.0, 0.0, 0.0)


def test_metrics_single_point():
    e = metrics([100], [90])
    assert (e.mae, e.mse, e.mape) == pytest.approx((10, 100, 10))


def test_metrics_two_points():
    e = metrics([2, 4], [3, 3])
    assert (e.mae, e.mse, e.mape) == pytest.approx((1, 1, 37.5))


def test_metrics_errors():
    with pytest.raises(SeriesError, match="length"):
        metrics([1, 2], [1])
    with pytest.raises(SeriesError, match="zeros"):
        metrics([0, 1], [0, 1])


nonzero = st.floats(0.1, 1e3) | st.floats(-1e3, -0.1)


@settings(max_examples=200)
@given(st.lists(st.tuples(nonzero, st.floats(-1e3, 1e3)), min_size=1, max_size=30),
       st.floats(0.01, 100))
def test_metric_properties(pairs, c):
    y = np.array([a for a, _ in pairs])
    f = np.array([b for _, b in pairs])
    e = metrics(y, f)
    assert e.mae >= 0 and e.mse >= 0 and e.mape >= 0
    assert e.mae ** 2 <= e.mse * (1 + 1e-12) + 1e-300
    if np.all(y == f):
        assert e.mse == 0
    elif np.max(np.abs(y - f)) > 1e-150:
        assert e.mse > 0
    assert metrics(c * y, c * f).mape == pytest.approx(e.mape, rel=1e-9, abs=1e-12)
