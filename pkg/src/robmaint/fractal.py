"""Fractal values of a longitudinal level signal via Richardson plots.

For every 150 m window the signal is approximated by polylines with ``i``
equal chords (``i = 5 .. 580``), the polyline lengths ``L`` are regressed
on the chord lengths ``lambda = 150 m / i`` in log10-log10 space, and the
slopes over three wavelength bands are returned as short-, mid- and long-wave
fractal values.

All lengths are handled in millimetres: positions are converted from metres
before chord lengths are formed, so the band limits (5000 mm and 750 mm)
apply directly to ``lambda``.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

__all__ = [
    "LevelSignal",
    "FractalTriple",
    "WINDOW_M",
    "DIVIDERS",
    "polyline_length",
    "richardson_lengths",
    "richardson_slopes",
    "sliding_fractal",
    "segment_average",
    "moving_average_detrend",
    "read_level_csv",
    "write_fractal_csv",
    "FractalTransformer",
]

WINDOW_M = 150.0
SHIFT_M = 1.0
MIN_DIVIDERS, MAX_DIVIDERS = 5, 580
DIVIDERS = np.arange(MIN_DIVIDERS, MAX_DIVIDERS + 1)
LONG_MID_MM = 20000.0 / 4
MID_SHORT_MM = 3000.0 / 4
SECTIONS = ("short", "mid", "long")


@dataclass(frozen=True)
class LevelSignal:
    """Vertical track deviation in mm sampled every ``spacing`` metres."""

    samples: np.ndarray
    spacing: float = 0.25
    start: float = 0.0

    def __post_init__(self):
        y = np.array(self.samples, dtype=float)
        if y.ndim != 1 or y.size < 2:
            raise ValueError("a level signal needs at least two samples")
        if not np.all(np.isfinite(y)):
            raise ValueError("level signal contains non-finite samples")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        y.setflags(write=False)
        object.__setattr__(self, "samples", y)

    @property
    def length_m(self):
        return (self.samples.size - 1) * self.spacing

    @property
    def positions(self):
        return self.start + self.spacing * np.arange(self.samples.size)

    def window(self, offset_m, length_m=WINDOW_M):
        """Slice covering ``[offset_m, offset_m + length_m]`` (offsets on the sample grid)."""
        i0 = int(round(offset_m / self.spacing))
        i1 = i0 + int(math.ceil(length_m / self.spacing - 1e-9))
        if i0 < 0 or i1 >= self.samples.size:
            raise ValueError("window extends past the end of the signal")
        return LevelSignal(self.samples[i0 : i1 + 1], self.spacing, self.start + i0 * self.spacing)


@dataclass(frozen=True)
class FractalTriple:
    short: float
    mid: float
    long: float
    window_start: float = 0.0

    def __post_init__(self):
        for v in (self.short, self.mid, self.long):
            if not math.isfinite(v):
                raise ValueError("fractal values must be finite")

    def as_tuple(self):
        return (self.short, self.mid, self.long)


def _chord_grid(i, spacing):
    """Sample index and interpolation weight of every chord endpoint."""
    x = np.arange(i + 1) * (WINDOW_M / i) / spacing
    idx = np.minimum(np.floor(x).astype(np.int64), int(math.ceil(WINDOW_M / spacing - 1e-9)) - 1)
    return idx, x - idx


def _length_from_grid(y, idx, frac, i):
    pts = y[idx] * (1.0 - frac) + y[idx + 1] * frac
    dx = WINDOW_M * 1000.0 / i
    # W * mean(sqrt(1 + slope^2)) keeps a flat window at exactly W
    return WINDOW_M * 1000.0 * (np.sqrt(1.0 + (np.diff(pts) / dx) ** 2).sum() / i)


def polyline_length(window, divider_count):
    """Length in mm of the ``divider_count``-chord polyline over the first 150 m.

    Chord endpoints sit at ``j * 150 / i`` m and take linearly interpolated
    signal values.
    """
    i = int(divider_count)
    if not MIN_DIVIDERS <= i <= MAX_DIVIDERS:
        raise ValueError(f"divider count must lie in [{MIN_DIVIDERS}, {MAX_DIVIDERS}], got {i}")
    if window.length_m < WINDOW_M - 1e-9:
        raise ValueError(f"window covers {window.length_m} m, need {WINDOW_M} m")
    idx, frac = _chord_grid(i, window.spacing)
    return float(_length_from_grid(window.samples, idx, frac, i))


class _Grids:
    def __init__(self, spacing, dividers=DIVIDERS):
        self.dividers = np.asarray(dividers)
        self.grids = [_chord_grid(int(i), spacing) for i in self.dividers]

    def lengths(self, y):
        return np.array(
            [_length_from_grid(y, idx, frac, int(i)) for i, (idx, frac) in zip(self.dividers, self.grids)]
        )


def richardson_lengths(window):
    """``{i: L(i)}`` for every divider count."""
    if window.length_m < WINDOW_M - 1e-9:
        raise ValueError(f"window covers {window.length_m} m, need {WINDOW_M} m")
    L = _Grids(window.spacing).lengths(window.samples)
    return dict(zip(DIVIDERS.tolist(), L.tolist()))


def _ols_slope(x, y):
    # shifting y by its first value leaves the slope unchanged and keeps a
    # constant series at exactly zero
    y = y - y[0]
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def richardson_slopes(lengths, window_start=0.0):
    """Short-, mid- and long-wave slopes of ``log10 L`` against ``log10 lambda``.

    ``lengths`` maps divider counts ``i`` to polyline lengths; the chord length
    is ``lambda = 150000 / i`` mm.
    """
    if not lengths:
        raise ValueError("no polyline lengths given")
    i = np.array(sorted(lengths), dtype=float)
    L = np.array([lengths[k] for k in sorted(lengths)], dtype=float)
    if np.any(L <= 0):
        raise ValueError("polyline lengths must be positive")
    lam = WINDOW_M * 1000.0 / i
    x, y = np.log10(lam), np.log10(L)
    masks = {
        "short": lam < MID_SHORT_MM,
        "mid": (lam >= MID_SHORT_MM) & (lam < LONG_MID_MM),
        "long": lam >= LONG_MID_MM,
    }
    slopes = {}
    for name in SECTIONS:
        m = masks[name]
        if m.sum() < 2:
            raise ValueError(f"{name}-wave section has {int(m.sum())} point(s), need at least 2")
        slopes[name] = _ols_slope(x[m], y[m])
    return FractalTriple(slopes["short"], slopes["mid"], slopes["long"], float(window_start))


def sliding_fractal(signal, shift_m=SHIFT_M):
    """Fractal triples of every 150 m window, advancing by ``shift_m``.

    The window count is ``floor((length - 150) / shift) + 1``.
    """
    if signal.length_m < WINDOW_M - 1e-9:
        raise ValueError(f"signal covers {signal.length_m} m, need at least {WINDOW_M} m")
    step = shift_m / signal.spacing
    if abs(step - round(step)) > 1e-9:
        raise ValueError("the window shift must be a multiple of the sample spacing")
    step = int(round(step))
    n_windows = int(math.floor((signal.length_m - WINDOW_M) / shift_m + 1e-9)) + 1
    width = int(math.ceil(WINDOW_M / signal.spacing - 1e-9)) + 1
    grids = _Grids(signal.spacing)
    out = []
    y = signal.samples
    for w in range(n_windows):
        seg = y[w * step : w * step + width]
        L = grids.lengths(seg)
        lengths = dict(zip(DIVIDERS.tolist(), L.tolist()))
        out.append(richardson_slopes(lengths, signal.start + w * shift_m))
    return out


def segment_average(triples, segment_m=WINDOW_M, band="long"):
    """Mean fractal value of ``band`` per track segment of ``segment_m`` metres.

    Returns ``(segment_starts, means)`` with windows grouped by their start.
    """
    starts = np.array([t.window_start for t in triples])
    vals = np.array([getattr(t, band) for t in triples])
    keys = np.floor((starts - starts.min()) / segment_m).astype(np.int64)
    seg = np.unique(keys)
    means = np.array([vals[keys == k].mean() for k in seg])
    return starts.min() + seg * segment_m, means


def moving_average_detrend(signal, window_m=70.0):
    """Subtract a centred moving average (edge-padded); a crude high-pass for synthetic data."""
    n = max(1, int(round(window_m / signal.spacing)))
    kernel = np.ones(n) / n
    pad = n // 2
    padded = np.pad(signal.samples, (pad, n - 1 - pad), mode="edge")
    trend = np.convolve(padded, kernel, mode="valid")
    return LevelSignal(signal.samples - trend, signal.spacing, signal.start)


def read_level_csv(path):
    """Read a ``position_m, level_mm`` CSV into a :class:`LevelSignal`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["position_m", "level_mm"]:
            raise ValueError(f"{path}: expected header 'position_m,level_mm', got {header}")
        pos, lev = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pos.append(float(row[0]))
                lev.append(float(row[1]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from None
    pos = np.asarray(pos)
    if pos.size < 2:
        raise ValueError(f"{path}: need at least two samples")
    d = np.diff(pos)
    if np.any(d <= 0) or np.ptp(d) > 1e-6 * max(1.0, d.mean()):
        raise ValueError(f"{path}: positions must be increasing and evenly spaced")
    spacing = float(round(d.mean(), 9))
    return LevelSignal(np.asarray(lev), spacing, float(pos[0]))


def write_fractal_csv(path, triples):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window_start_m", "fv_short", "fv_mid", "fv_long"])
        for t in triples:
            w.writerow([repr(t.window_start), repr(t.short), repr(t.mid), repr(t.long)])


class FractalTransformer(TransformerMixin, BaseEstimator):
    """Turn level signals into ``(n_windows, 3)`` arrays of short/mid/long fractal values.

    Parameters
    ----------
    spacing : float
        Sample spacing in metres, used when ``transform`` gets a bare array.
    shift : float
        Window shift in metres.
    """

    def __init__(self, spacing=0.25, shift=SHIFT_M):
        self.spacing = spacing
        self.shift = shift

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        signal = X if isinstance(X, LevelSignal) else LevelSignal(np.ravel(X), self.spacing)
        return np.array([t.as_tuple() for t in sliding_fractal(signal, self.shift)])
