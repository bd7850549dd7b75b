"""Clock alignment between the 100 Hz mo-cap stream and 30 Hz cameras using
periodic LED flashes detected independently in both streams.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientMatches,
    IrregularPeriod,
    NoFlashesDetected,
    ResidualTooHigh,
)

FLASH_PERIOD_S = 6.0        # onset-to-onset: 5 s interval + 1 s on-time
INTENSITY_STEP = 30.0       # jump in max pixel value marking a flash onset
FLASH_ON_MARKERS = 6        # sync-object marker count while the IR LEDs shine
FLASH_OFF_MARKERS = 4
RESIDUAL_LIMIT_FRAMES = 0.5  # RMS fit residual gate, in mo-cap frames
RATE_TOLERANCE = 0.001       # fitted rate must sit within 0.1% of nominal


@dataclass
class IntensitySignal:
    """Per-frame max pixel value inside the sync-box crop (0-255)."""

    values: np.ndarray
    frame_rate: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")


@dataclass
class FlashTimeline:
    """Ordered flash onset frame indices from one stream."""

    onsets: list
    source: str                  # "video" | "mocap"
    frame_rate: float
    inferred: list = field(default_factory=list)

    def __post_init__(self):
        self.onsets = [int(o) for o in self.onsets]
        if not self.inferred:
            self.inferred = [False] * len(self.onsets)
        if any(b - a <= 0 for a, b in zip(self.onsets, self.onsets[1:])):
            raise ValueError("onsets must be strictly increasing")
        if len(self.inferred) != len(self.onsets):
            raise ValueError("inferred flags must match onsets")


@dataclass
class ClockMap:
    """Affine map from video frames to mo-cap frames:
    mocap = rate * video + offset."""

    offset: float
    rate: float
    residual_rms: float          # RMS fit residual, mo-cap frames
    video_hz: float
    mocap_hz: float

    def map_frame(self, video_frame) -> int:
        """Nearest mo-cap frame for a video frame (minimizes |dt|)."""
        return int(round(self.rate * float(video_frame) + self.offset))

    def map_frames(self, video_frames) -> np.ndarray:
        v = np.asarray(video_frames, dtype=float)
        return np.rint(self.rate * v + self.offset).astype(int)


def detect_flashes_video(signal: IntensitySignal,
                         threshold: float = INTENSITY_STEP,
                         period_s: float = FLASH_PERIOD_S) -> FlashTimeline:
    """Onsets where the intensity rises by more than ``threshold`` in one
    frame; onsets closer than half a period are merged (first kept)."""
    values = signal.values
    if values.size == 0:
        raise NoFlashesDetected("empty intensity signal")
    rises = np.flatnonzero(np.diff(values) > threshold) + 1
    min_gap = 0.5 * period_s * signal.frame_rate
    onsets = []
    for idx in rises:
        if not onsets or idx - onsets[-1] >= min_gap:
            onsets.append(int(idx))
    if not onsets:
        raise NoFlashesDetected("no intensity steps above threshold")
    return FlashTimeline(onsets, "video", signal.frame_rate)


def detect_flashes_mocap(marker_counts, frame_rate: float,
                         on_count: int = FLASH_ON_MARKERS,
                         off_count: int = FLASH_OFF_MARKERS) -> FlashTimeline:
    """Onsets where the sync-object marker count crosses from <= off_count
    to >= on_count (intermediate counts during the transition are skipped)."""
    counts = np.asarray(marker_counts, dtype=int).reshape(-1)
    if counts.size == 0:
        raise NoFlashesDetected("empty marker-count trace")
    onsets = []
    armed = counts[0] <= off_count
    for i, c in enumerate(counts):
        if armed and c >= on_count:
            onsets.append(i)
            armed = False
        elif not armed and c <= off_count:
            armed = True
    if not onsets:
        raise NoFlashesDetected("marker count never crossed to flash-on")
    return FlashTimeline(onsets, "mocap", frame_rate)


def fill_missing_flashes(timeline: FlashTimeline,
                         period_s: float = FLASH_PERIOD_S,
                         tolerance: float = 0.10) -> FlashTimeline:
    """Fill interior gaps spanning k >= 2 periods (within ``tolerance``
    relative) with k-1 inferred onsets, one period after the previous.
    Detected onsets are never moved."""
    if len(timeline.onsets) < 2:
        raise InsufficientMatches(
            "need >= 2 detected flashes to check the period")
    period_frames = period_s * timeline.frame_rate
    onsets = [timeline.onsets[0]]
    inferred = [timeline.inferred[0]]
    for prev, nxt, flag in zip(timeline.onsets, timeline.onsets[1:],
                               timeline.inferred[1:]):
        gap = nxt - prev
        k = max(1, round(gap / period_frames))
        if abs(gap - k * period_frames) > tolerance * k * period_frames:
            raise IrregularPeriod(
                f"gap of {gap} frames between onsets {prev} and {nxt} is not "
                f"a near-integer multiple of {period_frames:.1f} frames")
        for j in range(1, k):
            onsets.append(prev + round(j * period_frames))
            inferred.append(True)
        onsets.append(nxt)
        inferred.append(flag)
    return FlashTimeline(onsets, timeline.source, timeline.frame_rate,
                         inferred)


def build_clock_map(video: FlashTimeline, mocap: FlashTimeline,
                    residual_limit: float = RESIDUAL_LIMIT_FRAMES,
                    rate_tolerance: float = RATE_TOLERANCE) -> ClockMap:
    """Least-squares affine fit of mo-cap onset frames against video onset
    frames, after pairing flashes in order from the first onset of each.

    The fit residual is reported in mo-cap frames; an RMS above
    ``residual_limit`` raises ResidualTooHigh.
    """
    n = min(len(video.onsets), len(mocap.onsets))
    if n < 2:
        raise InsufficientMatches(
            f"need >= 2 matched flashes, got {n}")
    v = np.asarray(video.onsets[:n], dtype=float)
    m = np.asarray(mocap.onsets[:n], dtype=float)
    rate, offset = np.polyfit(v, m, 1)
    residual = m - (rate * v + offset)
    residual_rms = float(np.sqrt(np.mean(residual ** 2)))
    nominal = mocap.frame_rate / video.frame_rate
    if abs(rate / nominal - 1.0) > rate_tolerance:
        raise ResidualTooHigh(
            f"fitted rate {rate:.6f} deviates more than "
            f"{rate_tolerance:.2%} from nominal {nominal:.6f}")
    if residual_rms > residual_limit:
        raise ResidualTooHigh(
            f"clock fit residual {residual_rms:.3f} video frames exceeds "
            f"{residual_limit}")
    return ClockMap(float(offset), float(rate), residual_rms,
                    video.frame_rate, mocap.frame_rate)
