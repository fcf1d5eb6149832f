"""Direct-path geometry over a sampled terrain/surface profile.

Heights in a profile are above sea level. Antenna heights are above ground
and are placed on the terrain model at the two ends of the profile. Earth
curvature is applied by raising each surface sample by ``x (d - x) / 2R``
relative to the straight Tx-Rx chord.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True, eq=False)  # array fields: compare by identity
class PathProfile:
    spacing_m: float
    dsm_m: np.ndarray
    dtm_m: np.ndarray
    tx_height_agl_m: float
    rx_height_agl_m: float
    frequency_mhz: float

    def __post_init__(self):
        dsm = np.asarray(self.dsm_m, dtype=np.float64)
        dtm = np.asarray(self.dtm_m, dtype=np.float64)
        object.__setattr__(self, "dsm_m", dsm)
        object.__setattr__(self, "dtm_m", dtm)
        validate_profile(self)

    @property
    def n_samples(self) -> int:
        return self.dsm_m.shape[0]

    @property
    def distance_m(self) -> float:
        """Horizontal Tx-Rx distance."""
        return self.spacing_m * (self.n_samples - 1)

    @property
    def tx_height_abs_m(self) -> float:
        return float(self.dtm_m[0] + self.tx_height_agl_m)

    @property
    def rx_height_abs_m(self) -> float:
        return float(self.dtm_m[-1] + self.rx_height_agl_m)

    def offsets_m(self) -> np.ndarray:
        return np.arange(self.n_samples, dtype=np.float64) * self.spacing_m

    def reversed(self) -> "PathProfile":
        """The same link seen from the receiver end."""
        return PathProfile(
            spacing_m=self.spacing_m,
            dsm_m=self.dsm_m[::-1].copy(),
            dtm_m=self.dtm_m[::-1].copy(),
            tx_height_agl_m=self.rx_height_agl_m,
            rx_height_agl_m=self.tx_height_agl_m,
            frequency_mhz=self.frequency_mhz,
        )


def validate_profile(p: PathProfile) -> None:
    if p.dsm_m.ndim != 1 or p.dtm_m.ndim != 1:
        raise ValidationError("dsm_m and dtm_m must be one-dimensional")
    if p.dsm_m.shape != p.dtm_m.shape:
        raise ValidationError(
            f"dsm_m has {p.dsm_m.shape[0]} samples but dtm_m has {p.dtm_m.shape[0]}"
        )
    if p.dsm_m.shape[0] < 2:
        raise ValidationError("a profile needs at least 2 samples")
    if not (np.all(np.isfinite(p.dsm_m)) and np.all(np.isfinite(p.dtm_m))):
        raise ValidationError("profile heights must be finite")
    below = np.flatnonzero(p.dsm_m < p.dtm_m)
    if below.size:
        raise ValidationError(f"dsm_m below dtm_m at sample {int(below[0])}")
    for name in ("spacing_m", "tx_height_agl_m", "rx_height_agl_m", "frequency_mhz"):
        value = getattr(p, name)
        if not (np.isfinite(value) and value > 0):
            raise ValidationError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True, eq=False)
class ClearanceProfile:
    """Height of the direct path above the curvature-corrected surface.

    ``clearance_m < 0`` marks an obstructed sample. The two end samples are
    clamped to be non-negative because the antennas stand there.
    """

    x_m: np.ndarray
    clearance_m: np.ndarray
    slant_factor: float = field(default=1.0)

    @property
    def distance_m(self) -> float:
        return float(self.x_m[-1])

    @property
    def slant_length_m(self) -> float:
        return self.distance_m * self.slant_factor


def curvature_drop(x, d: float, radius: float = EARTH_RADIUS_M):
    """Bulge of the Earth above the chord at offset ``x`` on a link of length ``d``.

    Accepts a scalar or an array for ``x``; radius may be ``np.inf``.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius!r}")
    xa = np.asarray(x, dtype=np.float64)
    if np.any(xa < 0) or np.any(xa > d):
        raise ValueError(f"offset outside [0, {d}]")
    drop = xa * (d - xa) / (2.0 * radius)
    return float(drop) if drop.ndim == 0 else drop


def slant_factor(profile: PathProfile) -> float:
    rise = profile.rx_height_abs_m - profile.tx_height_abs_m
    return float(np.sqrt(1.0 + (rise / profile.distance_m) ** 2))


def direct_path_heights(profile: PathProfile) -> np.ndarray:
    h_tx = profile.tx_height_abs_m
    h_rx = profile.rx_height_abs_m
    t = np.linspace(0.0, 1.0, profile.n_samples)
    return h_tx + (h_rx - h_tx) * t


def clearance_profile(profile: PathProfile, radius: float = EARTH_RADIUS_M) -> ClearanceProfile:
    x = profile.offsets_m()
    d = profile.distance_m
    # x from arange can overshoot d by an ulp at the far end
    x[-1] = d
    surface = profile.dsm_m + curvature_drop(x, d, radius)
    clearance = direct_path_heights(profile) - surface
    clearance[0] = max(clearance[0], 0.0)
    clearance[-1] = max(clearance[-1], 0.0)
    return ClearanceProfile(x_m=x, clearance_m=clearance, slant_factor=slant_factor(profile))
