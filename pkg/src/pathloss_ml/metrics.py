"""Error statistics, binned error summaries, hexagonal binning and the FSPL baseline."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TextIO

import numpy as np

SQRT3 = np.sqrt(3.0)


def _pair(pred, target) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(target, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.shape[0]} predictions, {t.shape[0]} targets")
    if p.size == 0:
        raise ValueError("cannot score an empty set")
    return p, t


def mse(pred, target) -> float:
    p, t = _pair(pred, target)
    r = p - t
    return float(np.mean(r * r))


def rmse(pred, target) -> float:
    return float(np.sqrt(mse(pred, target)))


def mae(pred, target) -> float:
    p, t = _pair(pred, target)
    return float(np.mean(np.abs(p - t)))


def r_squared(pred, target) -> float:
    p, t = _pair(pred, target)
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("target has zero variance")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def pearson(x, y) -> float:
    a, b = _pair(x, y)
    a = a - a.mean()
    b = b - b.mean()
    saa, sbb = float(a @ a), float(b @ b)
    if saa == 0 or sbb == 0:
        raise ValueError("pearson correlation undefined for a constant input")
    r = float(a @ b) / np.sqrt(saa * sbb)
    return float(min(1.0, max(-1.0, r)))


def fspl(frequency_mhz, distance_m):
    """Free-space path loss in dB, 32.45 + 20 log10(d_km) + 20 log10(f_MHz)."""
    f = np.asarray(frequency_mhz, dtype=np.float64)
    d = np.asarray(distance_m, dtype=np.float64)
    if np.any(~(f > 0)) or np.any(~(d > 0)):
        raise ValueError("frequency and distance must be positive")
    out = 32.45 + 20.0 * np.log10(d / 1000.0) + 20.0 * np.log10(f)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# binned absolute error


@dataclass
class BinnedError:
    """Absolute-error statistics per bin. ``sd`` is the population SD of |error|.

    For distance bins ``low``/``high`` hold the bin edges; for discrete keys
    (frequency) ``keys`` holds the key and ``low``/``high`` are None.
    """

    count: np.ndarray
    mae: np.ndarray
    sd: np.ndarray
    low: np.ndarray | None = None
    high: np.ndarray | None = None
    keys: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.count)

    def write_csv(self, stream: TextIO) -> None:
        w = csv.writer(stream, lineterminator="\n")
        if self.keys is None:
            w.writerow(["bin_low", "bin_high", "count", "mae_db", "sd_db"])
            for row in zip(self.low, self.high, self.count, self.mae, self.sd):
                w.writerow([repr(float(row[0])), repr(float(row[1])), int(row[2]), repr(float(row[3])), repr(float(row[4]))])
        else:
            w.writerow(["frequency_mhz", "count", "mae_db", "sd_db"])
            for k, c, m, s in zip(self.keys, self.count, self.mae, self.sd):
                w.writerow([repr(float(k)), int(c), repr(float(m)), repr(float(s))])


def _group_abs_error(codes: np.ndarray, err: np.ndarray):
    uniq, inv = np.unique(codes, return_inverse=True)
    count = np.bincount(inv)
    s1 = np.bincount(inv, weights=err)
    mean = s1 / count
    dev = err - mean[inv]
    var = np.bincount(inv, weights=dev * dev) / count
    return uniq, count, mean, np.sqrt(var)


def bin_abs_error_by_distance(distance_m, pred, target, bin_width_m: float = 3000.0) -> BinnedError:
    """|pred - target| grouped into [k w, (k+1) w) distance bins; empty bins omitted."""
    if not bin_width_m > 0:
        raise ValueError("bin width must be positive")
    p, t = _pair(pred, target)
    d = np.asarray(distance_m, dtype=np.float64).ravel()
    if d.shape != p.shape:
        raise ValueError("distance and predictions differ in length")
    idx = np.floor(d / bin_width_m).astype(np.int64)
    uniq, count, mean, sd = _group_abs_error(idx, np.abs(p - t))
    return BinnedError(
        count=count, mae=mean, sd=sd, low=uniq * bin_width_m, high=(uniq + 1) * bin_width_m
    )


def abs_error_by_frequency(frequency_mhz, pred, target) -> BinnedError:
    p, t = _pair(pred, target)
    f = np.asarray(frequency_mhz, dtype=np.float64).ravel()
    if f.shape != p.shape:
        raise ValueError("frequency and predictions differ in length")
    uniq, count, mean, sd = _group_abs_error(f, np.abs(p - t))
    return BinnedError(count=count, mae=mean, sd=sd, keys=uniq)


# --------------------------------------------------------------------------
# hexagonal binning
#
# Flat-top hexagons with circumradius ``size``, axial coordinates (q, r):
#   center_x = 1.5 * size * q
#   center_y = sqrt(3) * size * (r + q / 2)

# neighbour offsets, including (0, 0), in lexicographic (dq, dr) order so that
# argmin picks the smallest (q, r) among equidistant centres
_HEX_OFFSETS = np.array(sorted([(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)]))


@dataclass
class HexBinGrid:
    cell_size: float
    q: np.ndarray
    r: np.ndarray
    center_x: np.ndarray
    center_y: np.ndarray
    count: np.ndarray

    def __len__(self) -> int:
        return len(self.count)

    def write_csv(self, stream: TextIO) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["q", "r", "center_x", "center_y", "count"])
        for row in zip(self.q, self.r, self.center_x, self.center_y, self.count):
            w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3])), int(row[4])])


def hex_center(q, r, size: float):
    q = np.asarray(q, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    return 1.5 * size * q, SQRT3 * size * (r + q / 2.0)


def _cube_round(qf: np.ndarray, rf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sf = -qf - rf
    q, r, s = np.round(qf), np.round(rf), np.round(sf)
    dq, dr, ds = np.abs(q - qf), np.abs(r - rf), np.abs(s - sf)
    fix_q = (dq > dr) & (dq > ds)
    fix_r = ~fix_q & (dr > ds)
    q = np.where(fix_q, -r - s, q)
    r = np.where(fix_r, -q - s, r)
    return q.astype(np.int64), r.astype(np.int64)


def hex_assign(x, y, size: float) -> tuple[np.ndarray, np.ndarray]:
    """Axial cell of the nearest hexagon centre for every point."""
    if not size > 0:
        raise ValueError("cell size must be positive")
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    qf = (2.0 / 3.0) * x / size
    rf = (-x / 3.0 + SQRT3 / 3.0 * y) / size
    q0, r0 = _cube_round(qf, rf)
    cq = q0[:, None] + _HEX_OFFSETS[None, :, 0]
    cr = r0[:, None] + _HEX_OFFSETS[None, :, 1]
    cx, cy = hex_center(cq, cr, size)
    d2 = (cx - x[:, None]) ** 2 + (cy - y[:, None]) ** 2
    pick = np.argmin(d2, axis=1)
    rows = np.arange(x.size)
    return cq[rows, pick], cr[rows, pick]


def hexbin(x, y, cell_size: float) -> HexBinGrid:
    """2-D histogram on a flat-top hexagonal tiling; only occupied cells are listed."""
    q, r = hex_assign(x, y, cell_size)
    if q.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return HexBinGrid(cell_size, empty, empty, np.empty(0), np.empty(0), empty)
    cells, count = np.unique(np.stack([q, r], axis=1), axis=0, return_counts=True)
    cx, cy = hex_center(cells[:, 0], cells[:, 1], cell_size)
    return HexBinGrid(cell_size, cells[:, 0], cells[:, 1], cx, cy, count)
