"""The eight scalar obstruction features of a link.

======  ==============================================  ======
name    meaning                                         units
======  ==============================================  ======
f1      frequency                                       MHz
f2      horizontal Tx-Rx distance                       m
f3      total obstructed length of the direct path      m
f4      first obstruction onset to last offset          m
f5      number of contiguous blocks                     count
f6      mean block length (f3 / f5)                     m
f7      min(Tx -> first onset, Rx -> last offset)       m
f8      max(Tx -> first onset, Rx -> last offset)       m
======  ==============================================  ======

f3..f8 are measured along the slanted direct path. When nothing obstructs
the link, f3 = f4 = f5 = f6 = 0 and f7 = f8 = slant link length. Taking the
min/max over the two ends makes every feature identical whichever end is
called the transmitter.
"""
from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np

from .errors import ValidationError
from .profile import EARTH_RADIUS_M, ClearanceProfile, PathProfile, clearance_profile, slant_factor

FEATURE_NAMES = ("f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8")
FEATURE_CONFIGS = (4, 6, 8)


@dataclass(frozen=True)
class Block:
    start_slant_m: float
    end_slant_m: float

    @property
    def length_m(self) -> float:
        return self.end_slant_m - self.start_slant_m


@dataclass(frozen=True)
class FeatureVector:
    f1_frequency_mhz: float
    f2_distance_m: float
    f3_total_depth_m: float
    f4_first_last_span_m: float
    f5_block_count: float
    f6_avg_block_depth_m: float
    f7_min_edge_dist_m: float
    f8_max_edge_dist_m: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = [float(v) for v in values]
        if len(values) != len(fields(cls)):
            raise ValidationError(f"expected 8 feature values, got {len(values)}")
        return cls(*values)


def _block_edges(cp: ClearanceProfile) -> tuple[np.ndarray, np.ndarray]:
    """Slant distances of block onsets and offsets, from the Tx end."""
    c = cp.clearance_m
    x = cp.x_m
    neg = c < 0
    if not neg.any():
        empty = np.empty(0)
        return empty, empty
    if neg[0] or neg[-1]:
        raise ValidationError("end samples of a clearance profile must not be obstructed")
    step = np.diff(neg.astype(np.int8))
    first = np.flatnonzero(step == 1) + 1  # first obstructed index of each run
    last = np.flatnonzero(step == -1)  # last obstructed index of each run

    # zero crossing of the linearly interpolated clearance
    c0, c1 = c[first - 1], c[first]
    starts = x[first - 1] + (x[first] - x[first - 1]) * (c0 / (c0 - c1))
    c0, c1 = c[last], c[last + 1]
    ends = x[last] + (x[last + 1] - x[last]) * (c0 / (c0 - c1))
    k = cp.slant_factor
    return starts * k, ends * k


def detect_blocks(cp: ClearanceProfile) -> list[Block]:
    starts, ends = _block_edges(cp)
    return [Block(float(s), float(e)) for s, e in zip(starts, ends)]


def _features_from_edges(
    frequency_mhz: float, distance_m: float, slant_length_m: float, starts, ends
) -> FeatureVector:
    n_blocks = len(starts)
    if n_blocks == 0:
        return FeatureVector(
            frequency_mhz, distance_m, 0.0, 0.0, 0.0, 0.0, slant_length_m, slant_length_m
        )
    total = float(np.sum(ends - starts))
    span = float(ends[-1] - starts[0])
    from_tx = float(starts[0])
    from_rx = float(slant_length_m - ends[-1])
    return FeatureVector(
        frequency_mhz,
        distance_m,
        total,
        span,
        float(n_blocks),
        total / n_blocks,
        min(from_tx, from_rx),
        max(from_tx, from_rx),
    )


def extract_features(profile: PathProfile, radius: float = EARTH_RADIUS_M) -> FeatureVector:
    cp = clearance_profile(profile, radius)
    starts, ends = _block_edges(cp)
    return _features_from_edges(
        float(profile.frequency_mhz), profile.distance_m, cp.slant_length_m, starts, ends
    )


def feature_matrix(profiles, radius: float = EARTH_RADIUS_M) -> np.ndarray:
    """Stack ``extract_features`` over an iterable of profiles into an (n, 8) array."""
    rows = [extract_features(p, radius).as_array() for p in profiles]
    if not rows:
        return np.empty((0, len(FEATURE_NAMES)))
    return np.vstack(rows)


def select_config(features, config: int) -> np.ndarray:
    """Leading ``config`` features (4, 6 or 8) of a FeatureVector or an (n, 8) matrix."""
    if config not in FEATURE_CONFIGS:
        raise ValueError(f"feature config must be one of {FEATURE_CONFIGS}, got {config!r}")
    if isinstance(features, FeatureVector):
        return features.as_array()[:config]
    arr = np.asarray(features, dtype=np.float64)
    return arr[..., :config]


def oracle_blocks(
    profile: PathProfile, radius: float = EARTH_RADIUS_M, refine: int = 1000
) -> tuple[float, int]:
    """Brute-force (total obstructed slant length, block count).

    Resamples the surface at ``spacing / refine`` by linear interpolation,
    evaluates curvature and the direct path exactly at every fine point and
    counts obstructed fine samples. Independent of the zero-crossing logic
    used by ``extract_features``.
    """
    if refine < 1:
        raise ValueError("refine must be >= 1")
    d = profile.distance_m
    n_fine = (profile.n_samples - 1) * refine + 1
    xf = np.linspace(0.0, d, n_fine)
    h_tx, h_rx = profile.tx_height_abs_m, profile.rx_height_abs_m
    # same end-sample rule as clearance_profile, applied to the surface
    coarse = profile.dsm_m.copy()
    coarse[0] = min(coarse[0], h_tx)
    coarse[-1] = min(coarse[-1], h_rx)
    dsm = np.interp(xf, profile.offsets_m(), coarse)
    chord = h_tx + (h_rx - h_tx) * (xf / d)
    c = chord - (dsm + xf * (d - xf) / (2.0 * radius))
    neg = c < 0
    total = np.count_nonzero(neg) * (d / (n_fine - 1)) * slant_factor(profile)
    n_blocks = int(np.count_nonzero(np.diff(neg.astype(np.int8)) == 1))
    return float(total), n_blocks


def oracle_total_depth(
    profile: PathProfile, radius: float = EARTH_RADIUS_M, refine: int = 1000
) -> float:
    return oracle_blocks(profile, radius, refine)[0]
