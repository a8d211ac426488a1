"""Dataset handling: Daphnet gait-recording ingestion, segmentation around
out-of-experiment spans, per-channel normalization, sliding-window extraction,
chronological splitting, and a seeded synthetic generator for tests.

A series is stored channels-first as ``x`` with shape ``(m, t)`` together with
per-timestamp boolean anomaly labels and the ``[start, end)`` bounds of the
contiguous segments windows may be drawn from.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

DAPHNET_CHANNELS = 9
STD_EPS = 1e-8


class DataError(ValueError):
    """Raised for unusable input data (parse failures, empty series, ...)."""


class RawRecord(NamedTuple):
    """One Daphnet line: millisecond timestamp, 9 acceleration channels
    (milli-g), and an annotation (0 = outside experiment, 1 = normal gait,
    2 = freeze)."""

    timestamp_ms: int
    channels: tuple
    annotation: int


@dataclass
class NormStats:
    """Per-channel mean and standard deviation (std clamped to >= 1e-8)."""

    mean: np.ndarray
    std: np.ndarray


@dataclass
class SeriesSet:
    """A multivariate series with labels and windowing segment bounds."""

    x: np.ndarray  # (m, t)
    labels: np.ndarray  # (t,) bool, True = anomalous
    segment_bounds: list[tuple[int, int]]
    norm_stats: NormStats | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.x.ndim != 2:
            raise DataError(f"series matrix must be 2-D, got shape {self.x.shape}")
        if self.labels.shape != (self.x.shape[1],):
            raise DataError(
                f"labels length {self.labels.shape} does not match t={self.x.shape[1]}"
            )
        self.segment_bounds = [(int(s), int(e)) for s, e in self.segment_bounds]
        for s, e in self.segment_bounds:
            if not (0 <= s < e <= self.x.shape[1]):
                raise DataError(f"segment bounds ({s}, {e}) out of range")

    @property
    def m(self) -> int:
        return self.x.shape[0]

    @property
    def t(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class WindowSample:
    """One scoring unit: an input window, its future target, and a label that
    is True iff any anomalous timestamp falls inside the *input* window."""

    x: np.ndarray  # (m, w)
    x_f: np.ndarray  # (m, h)
    label: bool
    origin_index: int


def parse_daphnet(path) -> list[RawRecord]:
    """Parse one recording session: 11 whitespace-separated integers per line
    (timestamp, 9 channels, annotation).

    Raises `DataError` naming the 1-based line number on malformed lines, and
    a distinct error for files with no records at all.
    """
    path = Path(path)
    records: list[RawRecord] = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != 11:
                raise DataError(
                    f"{path.name}:{lineno}: expected 11 fields, got {len(tokens)}"
                )
            try:
                values = [int(tok) for tok in tokens]
            except ValueError:
                raise DataError(f"{path.name}:{lineno}: non-numeric token in line") from None
            if values[10] not in (0, 1, 2):
                raise DataError(
                    f"{path.name}:{lineno}: annotation must be 0, 1 or 2, got {values[10]}"
                )
            records.append(
                RawRecord(
                    timestamp_ms=values[0],
                    channels=tuple(float(v) for v in values[1:10]),
                    annotation=values[10],
                )
            )
    if not records:
        raise DataError(f"{path.name}: file contains no records")
    return records


def segmentize(records: Sequence[RawRecord]) -> SeriesSet:
    """Drop annotation-0 records and split the rest into maximal contiguous
    runs; each run becomes one segment so windows never straddle a gap.

    Labels mark annotation-2 (freeze) timestamps.
    """
    if not records:
        raise DataError("no records to segmentize")
    columns: list[tuple] = []
    labels: list[bool] = []
    bounds: list[tuple[int, int]] = []
    start = None
    prev_kept = False
    for rec in records:
        if rec.annotation == 0:
            if prev_kept:
                bounds.append((start, len(columns)))
            prev_kept = False
            continue
        if not prev_kept:
            start = len(columns)
            prev_kept = True
        columns.append(rec.channels)
        labels.append(rec.annotation == 2)
    if prev_kept:
        bounds.append((start, len(columns)))
    if not columns:
        raise DataError("all records carry annotation 0; nothing usable")
    x = np.array(columns, dtype=np.float64).T
    return SeriesSet(x=x, labels=np.array(labels, dtype=bool), segment_bounds=bounds)


def concat_series(parts: Sequence[SeriesSet]) -> SeriesSet:
    """Concatenate series from several sessions, keeping segments separate."""
    if not parts:
        raise DataError("no series to concatenate")
    m = parts[0].m
    if any(p.m != m for p in parts):
        raise DataError("channel counts differ across series")
    bounds = []
    offset = 0
    for p in parts:
        bounds.extend((s + offset, e + offset) for s, e in p.segment_bounds)
        offset += p.t
    return SeriesSet(
        x=np.concatenate([p.x for p in parts], axis=1),
        labels=np.concatenate([p.labels for p in parts]),
        segment_bounds=bounds,
    )


def fit_normalize(train: SeriesSet) -> NormStats:
    """Per-channel mean/std from the training portion only; constant channels
    get their std clamped so normalization stays defined."""
    mean = train.x.mean(axis=1)
    std = train.x.std(axis=1)
    return NormStats(mean=mean, std=np.maximum(std, STD_EPS))


def apply_normalize(series: SeriesSet, stats: NormStats) -> SeriesSet:
    """Z-score each channel with the supplied (training) statistics."""
    x = (series.x - stats.mean[:, None]) / stats.std[:, None]
    return replace(series, x=x, norm_stats=stats)


def unapply_normalize(series: SeriesSet) -> SeriesSet:
    """Invert `apply_normalize` using the stats recorded on the series."""
    if series.norm_stats is None:
        raise DataError("series carries no normalization stats to invert")
    stats = series.norm_stats
    x = series.x * stats.std[:, None] + stats.mean[:, None]
    return replace(series, x=x, norm_stats=None)


def window_count(length: int, w: int, h: int, stride: int) -> int:
    """Number of windows a segment of the given length yields."""
    if length < w + h:
        return 0
    return (length - w - h) // stride + 1


def make_windows(series: SeriesSet, w: int, h: int, stride: int = 1) -> list[WindowSample]:
    """Slide a window of length ``w`` with an ``h``-step future target through
    each segment. Window starts advance by ``stride`` while the window plus
    its future fits inside the segment; segments shorter than ``w + h`` yield
    nothing. The label is True iff any input-window timestamp is anomalous.
    """
    if stride < 1:
        raise DataError(f"stride must be >= 1, got {stride}")
    if w < 1 or h < 1:
        raise DataError(f"window and horizon must be >= 1, got w={w}, h={h}")
    samples: list[WindowSample] = []
    for seg_start, seg_end in series.segment_bounds:
        length = seg_end - seg_start
        for k in range(window_count(length, w, h, stride)):
            s = seg_start + k * stride
            samples.append(
                WindowSample(
                    x=series.x[:, s : s + w],
                    x_f=series.x[:, s + w : s + w + h],
                    label=bool(series.labels[s : s + w].any()),
                    origin_index=s,
                )
            )
    if not samples:
        raise DataError(
            f"no segment is long enough for w={w}, h={h} "
            f"(longest is {max((e - s for s, e in series.segment_bounds), default=0)})"
        )
    return samples


def normal_only(samples: Sequence[WindowSample]) -> list[WindowSample]:
    """Training filter: keep only windows without anomalous timestamps."""
    return [s for s in samples if not s.label]


def stack_windows(samples: Sequence[WindowSample]):
    """Stack samples into ``(n, m, w)`` and ``(n, m, h)`` arrays for batching."""
    xs = np.stack([s.x for s in samples])
    xfs = np.stack([s.x_f for s in samples])
    return xs, xfs


def split(series: SeriesSet, ratios: tuple[float, float, float]):
    """Chronological three-way split applied within every segment.

    Each segment contributes its leading portion to train, the next to val,
    and the tail to test; no timestamps are shuffled. Warns when the val
    portion contains no anomalous timestamps, since threshold selection then
    has to fall back to the percentile rule.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {sum(ratios)}")

    pieces: dict[str, list[tuple[int, int]]] = {"train": [], "val": [], "test": []}
    for s, e in series.segment_bounds:
        length = e - s
        c1 = s + int(length * ratios[0])
        c2 = s + int(length * (ratios[0] + ratios[1]))
        if c1 > s:
            pieces["train"].append((s, c1))
        if c2 > c1:
            pieces["val"].append((c1, c2))
        if e > c2:
            pieces["test"].append((c2, e))

    def build(ranges):
        if not ranges:
            raise DataError("a split portion received no timestamps; adjust ratios")
        cols = np.concatenate([series.x[:, s:e] for s, e in ranges], axis=1)
        labs = np.concatenate([series.labels[s:e] for s, e in ranges])
        bounds = []
        off = 0
        for s, e in ranges:
            bounds.append((off, off + (e - s)))
            off += e - s
        return SeriesSet(x=cols, labels=labs, segment_bounds=bounds, norm_stats=series.norm_stats)

    train, val, test = build(pieces["train"]), build(pieces["val"]), build(pieces["test"])
    if not val.labels.any():
        warnings.warn(
            "validation split contains no anomalous timestamps; "
            "best-F1 threshold selection will fall back to the percentile rule",
            stacklevel=2,
        )
    return train, val, test


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

ANOMALY_KINDS = ("spike", "frequency_shift", "correlation_break")


@dataclass(frozen=True)
class AnomalySpec:
    """One injected anomaly over ``[start, end)``.

    ``channel`` selects the affected channel for frequency shifts and
    correlation breaks; spikes hit every channel.
    """

    kind: str
    start: int
    end: int
    channel: int = 0

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise DataError(f"unknown anomaly kind {self.kind!r}")
        if not (0 <= self.start < self.end):
            raise DataError(f"bad anomaly interval [{self.start}, {self.end})")


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic series layout: phase-coupled sinusoids plus Gaussian noise.

    Channel ``i`` oscillates at ``base_freqs[i % len(base_freqs)]`` (cycles per
    step) with a phase locked to a shared random base phase, so channels are
    mutually dependent; a correlation break re-draws one channel's phase
    independently, a frequency shift triples one channel's frequency over its
    interval, and a spike adds offsets of five noise standard deviations with
    per-sample random signs on every channel.
    """

    m: int
    t: int
    base_freqs: tuple[float, ...] = (0.013, 0.021, 0.034)
    noise_sigma: float = 0.05
    anomalies: tuple[AnomalySpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.m < 1 or self.t < 2:
            raise DataError(f"need m >= 1 and t >= 2, got m={self.m}, t={self.t}")
        if not self.base_freqs:
            raise DataError("base_freqs must be nonempty")
        for a in self.anomalies:
            if a.end > self.t:
                raise DataError(f"anomaly interval [{a.start}, {a.end}) exceeds t={self.t}")
            if a.channel < 0 or a.channel >= self.m:
                raise DataError(f"anomaly channel {a.channel} out of range for m={self.m}")
        intervals = sorted((a.start, a.end) for a in self.anomalies)
        for (s1, e1), (s2, e2) in zip(intervals, intervals[1:]):
            if s2 < e1:
                raise DataError(
                    f"anomaly intervals [{s1}, {e1}) and [{s2}, {e2}) overlap"
                )


def synth_generate(spec: SynthSpec, seed: int) -> SeriesSet:
    """Deterministically generate a series from a spec and seed.

    The same (spec, seed) pair always produces bit-identical output: all
    random draws happen in a fixed order from one seeded generator.
    """
    rng = np.random.default_rng(seed)
    t_idx = np.arange(spec.t, dtype=np.float64)
    base_phase = rng.uniform(0.0, 2.0 * np.pi)
    freqs = np.array(
        [spec.base_freqs[i % len(spec.base_freqs)] for i in range(spec.m)], dtype=np.float64
    )
    phases = base_phase + 2.0 * np.pi * np.arange(spec.m) / spec.m
    x = np.sin(2.0 * np.pi * freqs[:, None] * t_idx[None, :] + phases[:, None])
    x += rng.normal(0.0, spec.noise_sigma, size=x.shape)
    labels = np.zeros(spec.t, dtype=bool)

    for anom in spec.anomalies:
        sl = slice(anom.start, anom.end)
        span = anom.end - anom.start
        if anom.kind == "spike":
            signs = rng.choice((-1.0, 1.0), size=(spec.m, span))
            x[:, sl] += 5.0 * spec.noise_sigma * signs
        elif anom.kind == "frequency_shift":
            c = anom.channel
            x[c, sl] = np.sin(
                2.0 * np.pi * 3.0 * freqs[c] * t_idx[sl] + phases[c]
            ) + rng.normal(0.0, spec.noise_sigma, size=span)
        else:  # correlation_break
            c = anom.channel
            new_phase = rng.uniform(0.0, 2.0 * np.pi)
            x[c, sl] = np.sin(2.0 * np.pi * freqs[c] * t_idx[sl] + new_phase) + rng.normal(
                0.0, spec.noise_sigma, size=span
            )
        labels[sl] = True

    return SeriesSet(x=x, labels=labels, segment_bounds=[(0, spec.t)])
