import numpy as np
import pytest
from scipy import integrate

from robmaint.fractal import (
    DIVIDERS,
    FractalTransformer,
    LevelSignal,
    moving_average_detrend,
    polyline_length,
    read_level_csv,
    richardson_lengths,
    richardson_slopes,
    segment_average,
    sliding_fractal,
    write_fractal_csv,
)

SPACING = 0.25


def _signal(length_m, fn=None):
    x = np.arange(int(round(length_m / SPACING)) + 1) * SPACING
    y = np.zeros_like(x) if fn is None else fn(x)
    return LevelSignal(y, SPACING)


def _sine(x):
    return 5.0 * np.sin(2 * np.pi * x / 3.0)


def _ref_slope(x, y):
    # reference OLS through numpy's polyfit
    return np.polyfit(x, y, 1)[0]


def test_flat_window_length_exact():
    flat = _signal(150)
    for i in (5, 17, 580):
        assert polyline_length(flat, i) == 150_000.0


def test_flat_slopes_exact_zero():
    t = richardson_slopes(richardson_lengths(_signal(150)))
    assert t.as_tuple() == (0.0, 0.0, 0.0)


def test_power_law_slopes():
    lengths = {int(i): 3.7 * (150_000.0 / i) ** -0.3 for i in DIVIDERS}
    t = richardson_slopes(lengths)
    for v in t.as_tuple():
        assert v == pytest.approx(-0.3, abs=1e-9)


def test_sinusoid_length_vs_dense_arc_length():
    sig = _signal(150, _sine)
    got = polyline_length(sig, 580)
    # arc length of the underlying curve in mm, from the analytic derivative
    dydx = lambda x: 5.0 * 2 * np.pi / 3.0 * np.cos(2 * np.pi * x / 3.0) / 1000.0  # noqa: E731
    oracle, _ = integrate.quad(lambda x: np.sqrt(1 + dydx(x) ** 2), 0, 150, limit=2000)
    assert got == pytest.approx(oracle * 1000.0, rel=0.005)


def test_sinusoid_slopes_match_reference_ols():
    sig = _signal(150, _sine)
    lengths = richardson_lengths(sig)
    t = richardson_slopes(lengths)
    i = np.array(sorted(lengths), float)
    lam = 150_000.0 / i
    logL = np.log10([lengths[k] for k in sorted(lengths)])
    bands = {
        "short": lam < 750,
        "mid": (lam >= 750) & (lam < 5000),
        "long": lam >= 5000,
    }
    for name, m in bands.items():
        assert getattr(t, name) == pytest.approx(_ref_slope(np.log10(lam[m]), logL[m]), abs=1e-9)


def test_nested_dividers_never_shorten():
    sig = _signal(150, lambda x: np.random.default_rng(0).normal(0, 1, x.size).cumsum())
    for i in (5, 7, 12, 50, 96):
        for k in (2, 3):
            if i * k <= 580:
                assert polyline_length(sig, i * k) >= polyline_length(sig, i) - 1e-9


def test_sparse_section_needs_two_points():
    lengths = {i: 150_000.0 for i in (5, 6, 100, 400, 500)}
    with pytest.raises(ValueError, match="mid-wave section has 1 point"):
        richardson_slopes(lengths)


def test_divider_range_checked():
    with pytest.raises(ValueError):
        polyline_length(_signal(150), 4)
    with pytest.raises(ValueError):
        polyline_length(_signal(149), 5)


def test_window_counts():
    assert len(sliding_fractal(_signal(150))) == 1
    triples = sliding_fractal(_signal(160))
    assert len(triples) == 11
    assert [t.window_start for t in triples] == list(range(11))


def test_stationary_signal_is_stable():
    rng = np.random.default_rng(1)
    x = np.arange(int(170 / SPACING) + 1) * SPACING
    y = sum(a * np.sin(2 * np.pi * x / w + p) for a, w, p in zip((2, 1, 0.5), (40, 7, 1.3), rng.uniform(0, 6, 3)))
    vals = np.array([t.as_tuple() for t in sliding_fractal(LevelSignal(y, SPACING))])
    assert np.all(vals.var(axis=0) < 0.1 * np.abs(vals.mean(axis=0)))


def test_detrend_removes_offset():
    sig = _signal(200, lambda x: 3.0 + 0 * x)
    np.testing.assert_allclose(moving_average_detrend(sig).samples, 0.0, atol=1e-12)


def test_segment_average_groups():
    triples = sliding_fractal(_signal(160, _sine))
    starts, means = segment_average(triples, segment_m=5)
    np.testing.assert_array_equal(starts, [0.0, 5.0, 10.0])
    assert means[2] == triples[10].long


def test_csv_roundtrip(tmp_path):
    sig = _signal(152, _sine)
    path = tmp_path / "level.csv"
    with open(path, "w") as fh:
        fh.write("position_m,level_mm\n")
        for p, v in zip(sig.positions, sig.samples):
            fh.write(f"{float(p)!r},{float(v)!r}\n")
    back = read_level_csv(path)
    assert back.spacing == SPACING
    np.testing.assert_array_equal(back.samples, sig.samples)
    out = tmp_path / "fv.csv"
    write_fractal_csv(out, sliding_fractal(back, 1.0))
    assert out.read_text().splitlines()[0] == "window_start_m,fv_short,fv_mid,fv_long"
    assert len(out.read_text().splitlines()) == 4


def test_uneven_positions_rejected(tmp_path):
    path = tmp_path / "level.csv"
    path.write_text("position_m,level_mm\n0,0\n0.25,0\n0.7,0\n")
    with pytest.raises(ValueError, match="evenly"):
        read_level_csv(path)


def test_transformer_shape():
    sig = _signal(155, _sine)
    out = FractalTransformer(spacing=SPACING).fit_transform(sig.samples)
    assert out.shape == (6, 3)
    assert FractalTransformer().get_params() == {"spacing": 0.25, "shift": 1.0}
