"""Link samples: I/O, filtering, splitting, normalization, holdouts, synthetic data.

Two on-disk sample formats are understood.

``jsonl``
    One object per line::

        {"group": "London", "frequency_mhz": 915.0, "spacing_m": 10.0,
         "tx_height_agl_m": 20.0, "rx_height_agl_m": 2.0,
         "dtm_m": [...], "dsm_m": [...], "path_loss_db": 121.3,
         "noise_floor_db": 150.0}

    ``noise_floor_db`` is optional.

``csv-long``
    One row per profile point, rows of a link contiguous::

        link_id,group,frequency_mhz,spacing_m,tx_height_agl_m,rx_height_agl_m,
        path_loss_db,noise_floor_db,dtm_m,dsm_m

    The per-link columns repeat on every row of the link and must agree;
    ``noise_floor_db`` may be empty.

Extracted features are stored as CSV with header
``group,f1,f2,f3,f4,f5,f6,f7,f8,path_loss_db``.

``noise_floor_db`` is expressed on the path-loss scale: it is the path loss at
which the received signal would sit exactly on the measurement noise floor, so
a sample's headroom above the floor is ``noise_floor_db - path_loss_db``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .errors import ParseError, ValidationError
from .features import FEATURE_NAMES, extract_features
from .profile import EARTH_RADIUS_M, PathProfile

SAMPLE_FORMATS = ("jsonl", "csv-long")
UK_FREQUENCIES_MHZ = (449.0, 915.0, 1802.0, 2695.0, 3602.0, 5850.0)
CSV_LONG_FIELDS = (
    "link_id",
    "group",
    "frequency_mhz",
    "spacing_m",
    "tx_height_agl_m",
    "rx_height_agl_m",
    "path_loss_db",
    "noise_floor_db",
    "dtm_m",
    "dsm_m",
)
FEATURE_CSV_HEADER = ("group",) + FEATURE_NAMES + ("path_loss_db",)


@dataclass(frozen=True)
class LinkSample:
    profile: PathProfile
    measured_path_loss_db: float
    group: str
    noise_floor_db: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.measured_path_loss_db):
            raise ValidationError("path loss must be finite")
        if not self.group:
            raise ValidationError("group label must be non-empty")
        if self.noise_floor_db is not None and not math.isfinite(self.noise_floor_db):
            raise ValidationError("noise floor must be finite when given")


# --------------------------------------------------------------------------
# sample I/O


def _sample_from_record(rec: dict, line: int) -> LinkSample:
    try:
        profile = PathProfile(
            spacing_m=float(rec["spacing_m"]),
            dsm_m=np.asarray(rec["dsm_m"], dtype=np.float64),
            dtm_m=np.asarray(rec["dtm_m"], dtype=np.float64),
            tx_height_agl_m=float(rec["tx_height_agl_m"]),
            rx_height_agl_m=float(rec["rx_height_agl_m"]),
            frequency_mhz=float(rec["frequency_mhz"]),
        )
        floor = rec.get("noise_floor_db")
        return LinkSample(
            profile=profile,
            measured_path_loss_db=float(rec["path_loss_db"]),
            group=str(rec["group"]),
            noise_floor_db=None if floor is None else float(floor),
        )
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", line) from None
    except ValidationError as exc:
        raise ValidationError(f"line {line}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad numeric value ({exc})", line) from None


def _iter_jsonl(stream: TextIO) -> Iterator[LinkSample]:
    for lineno, raw in enumerate(stream, start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise ParseError("expected a JSON object", lineno)
        yield _sample_from_record(rec, lineno)


def _iter_csv_long(stream: TextIO) -> Iterator[LinkSample]:
    reader = csv.DictReader(stream)
    missing = set(CSV_LONG_FIELDS) - set(reader.fieldnames or ())
    if reader.fieldnames is None:
        return
    if missing:
        raise ParseError(f"missing columns {sorted(missing)}", 1)

    current_id = None
    head: dict | None = None
    head_line = 0
    dtm: list[float] = []
    dsm: list[float] = []
    scalar_keys = [k for k in CSV_LONG_FIELDS if k not in ("dtm_m", "dsm_m")]

    def flush():
        rec = {k: head[k] for k in scalar_keys}
        if rec["noise_floor_db"] in ("", None):
            rec["noise_floor_db"] = None
        rec["dtm_m"] = dtm
        rec["dsm_m"] = dsm
        return _sample_from_record(rec, head_line)

    for row in reader:
        lineno = reader.line_num
        if row["link_id"] != current_id:
            if head is not None:
                yield flush()
            current_id = row["link_id"]
            head, head_line, dtm, dsm = row, lineno, [], []
        else:
            for k in scalar_keys:
                if row[k] != head[k]:
                    raise ValidationError(
                        f"line {lineno}: {k} changes within link {current_id!r}"
                    )
        try:
            dtm.append(float(row["dtm_m"]))
            dsm.append(float(row["dsm_m"]))
        except (TypeError, ValueError):
            raise ParseError("bad height value", lineno) from None
    if head is not None:
        yield flush()


def iter_samples(stream: TextIO, fmt: str = "jsonl") -> Iterator[LinkSample]:
    """Stream samples one at a time; errors carry the offending line number."""
    if fmt == "jsonl":
        return _iter_jsonl(stream)
    if fmt == "csv-long":
        return _iter_csv_long(stream)
    raise ValueError(f"unknown sample format {fmt!r}; expected one of {SAMPLE_FORMATS}")


def parse_samples(stream: TextIO, fmt: str = "jsonl") -> list[LinkSample]:
    return list(iter_samples(stream, fmt))


def sample_to_record(s: LinkSample) -> dict:
    p = s.profile
    rec = {
        "group": s.group,
        "frequency_mhz": float(p.frequency_mhz),
        "spacing_m": float(p.spacing_m),
        "tx_height_agl_m": float(p.tx_height_agl_m),
        "rx_height_agl_m": float(p.rx_height_agl_m),
        "dtm_m": p.dtm_m.tolist(),
        "dsm_m": p.dsm_m.tolist(),
        "path_loss_db": float(s.measured_path_loss_db),
    }
    if s.noise_floor_db is not None:
        rec["noise_floor_db"] = float(s.noise_floor_db)
    return rec


def write_samples(samples: Iterable[LinkSample], stream: TextIO, fmt: str = "jsonl") -> None:
    if fmt == "jsonl":
        for s in samples:
            stream.write(json.dumps(sample_to_record(s)))
            stream.write("\n")
        return
    if fmt != "csv-long":
        raise ValueError(f"unknown sample format {fmt!r}")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_LONG_FIELDS)
    for i, s in enumerate(samples):
        p = s.profile
        floor = "" if s.noise_floor_db is None else repr(float(s.noise_floor_db))
        head = [
            str(i),
            s.group,
            repr(float(p.frequency_mhz)),
            repr(float(p.spacing_m)),
            repr(float(p.tx_height_agl_m)),
            repr(float(p.rx_height_agl_m)),
            repr(float(s.measured_path_loss_db)),
            floor,
        ]
        for t, h in zip(p.dtm_m.tolist(), p.dsm_m.tolist()):
            w.writerow(head + [repr(t), repr(h)])


# --------------------------------------------------------------------------
# feature tables


@dataclass
class FeatureTable:
    """Extracted features with labels and group tags, row-aligned."""

    groups: np.ndarray
    features: np.ndarray
    path_loss_db: np.ndarray

    def __post_init__(self):
        self.groups = np.asarray(self.groups, dtype=object)
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, len(FEATURE_NAMES))
        self.path_loss_db = np.asarray(self.path_loss_db, dtype=np.float64)
        n = len(self.groups)
        if self.features.shape[0] != n or self.path_loss_db.shape[0] != n:
            raise ValidationError("feature table columns have different lengths")

    def __len__(self) -> int:
        return len(self.groups)

    def group_labels(self) -> list[str]:
        """Distinct groups in order of first appearance."""
        return list(dict.fromkeys(self.groups.tolist()))

    def subset(self, index) -> "FeatureTable":
        return FeatureTable(self.groups[index], self.features[index], self.path_loss_db[index])

    def in_groups(self, groups: Iterable[str]) -> np.ndarray:
        return np.isin(self.groups, list(groups))

    @classmethod
    def from_samples(cls, samples: Iterable[LinkSample], radius: float = EARTH_RADIUS_M):
        groups, rows, labels = [], [], []
        for s in samples:
            groups.append(s.group)
            rows.append(extract_features(s.profile, radius).as_array())
            labels.append(s.measured_path_loss_db)
        feats = np.vstack(rows) if rows else np.empty((0, len(FEATURE_NAMES)))
        return cls(np.array(groups, dtype=object), feats, np.array(labels, dtype=np.float64))


def write_feature_csv(table: FeatureTable, stream: TextIO) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(FEATURE_CSV_HEADER)
    for g, row, y in zip(table.groups, table.features.tolist(), table.path_loss_db.tolist()):
        w.writerow([g] + [repr(v) for v in row] + [repr(y)])


def read_feature_csv(stream: TextIO) -> FeatureTable:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return FeatureTable(np.array([], dtype=object), np.empty((0, 8)), np.empty(0))
    if tuple(header) != FEATURE_CSV_HEADER:
        raise ParseError(f"expected header {','.join(FEATURE_CSV_HEADER)}", 1)
    groups, rows, labels = [], [], []
    for row in reader:
        if not row:
            continue
        if len(row) != len(FEATURE_CSV_HEADER):
            raise ParseError(f"expected {len(FEATURE_CSV_HEADER)} fields", reader.line_num)
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise ParseError("bad numeric value", reader.line_num) from None
        groups.append(row[0])
        rows.append(vals[:-1])
        labels.append(vals[-1])
    return FeatureTable(
        np.array(groups, dtype=object),
        np.array(rows, dtype=np.float64).reshape(-1, 8),
        np.array(labels, dtype=np.float64),
    )


# --------------------------------------------------------------------------
# filtering, subsampling, splitting


def filter_noise(samples: Iterable[LinkSample], margin_db: float = 6.0) -> list[LinkSample]:
    """Keep samples more than ``margin_db`` above the noise floor.

    Samples without a recorded floor are treated as already filtered.
    """
    if margin_db < 0:
        raise ValueError("margin_db must be non-negative")
    return [
        s
        for s in samples
        if s.noise_floor_db is None or s.noise_floor_db - s.measured_path_loss_db > margin_db
    ]


def subsample(
    samples: Sequence[LinkSample], per_stratum: int, seed: int
) -> list[LinkSample]:
    """Uniform draw without replacement of up to ``per_stratum`` samples per
    (group, frequency) stratum. Input order is preserved in the output."""
    if per_stratum < 1:
        raise ValueError("per_stratum must be >= 1")
    strata: dict[tuple, list[int]] = {}
    for i, s in enumerate(samples):
        strata.setdefault((s.group, float(s.profile.frequency_mhz)), []).append(i)
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for members in strata.values():
        if len(members) <= per_stratum:
            keep.extend(members)
        else:
            keep.extend(rng.choice(members, size=per_stratum, replace=False).tolist())
    return [samples[i] for i in sorted(keep)]


def split_indices(n: int, train_fraction: float = 0.8, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if n < 2:
        raise ValidationError("need at least 2 samples to split")
    n_train = int(math.floor(n * train_fraction + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def split(samples: Sequence, train_fraction: float = 0.8, seed: int = 0):
    """Random disjoint (train, validation) partition, deterministic per seed.

    Works on lists of samples and on FeatureTables alike.
    """
    tr, va = split_indices(len(samples), train_fraction, seed)
    if isinstance(samples, FeatureTable):
        return samples.subset(tr), samples.subset(va)
    return [samples[i] for i in tr], [samples[i] for i in va]


# --------------------------------------------------------------------------
# normalization


@dataclass
class Normalizer:
    mean: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.sd = np.asarray(self.sd, dtype=np.float64)
        if self.mean.shape != self.sd.shape:
            raise ValidationError("normalizer mean and sd lengths differ")
        if np.any(~(self.sd > 0)):
            raise ValidationError("normalizer sd must be positive")

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.shape[0]:
            raise ValidationError(
                f"normalizer expects {self.mean.shape[0]} columns, got {x.shape[-1]}"
            )
        return (x - self.mean) / self.sd

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mean"]), np.array(d["sd"]))


def fit_normalizer(train_features, names: Sequence[str] | None = None) -> Normalizer:
    """Per-column mean and population SD of the training matrix."""
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("need a 2-D matrix with at least 2 rows to fit a normalizer")
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    names = names or FEATURE_NAMES
    for j in range(x.shape[1]):
        if sd[j] <= 1e-12 * max(1.0, abs(mean[j])):
            label = names[j] if j < len(names) else f"column {j}"
            raise ValidationError(f"feature {label} is constant in the training data")
    return Normalizer(mean, sd)


# --------------------------------------------------------------------------
# holdout scenarios

NO_HOLDOUT = "no-holdout"


@dataclass(frozen=True)
class Scenario:
    """Which groups train the model and which one is held out for blind test.

    ``external_test`` scenarios train on every group and are tested on data
    supplied separately (e.g. another country's drive tests).
    """

    name: str
    train_groups: frozenset
    test_groups: frozenset = field(default_factory=frozenset)
    external_test: bool = False

    def __post_init__(self):
        object.__setattr__(self, "train_groups", frozenset(self.train_groups))
        object.__setattr__(self, "test_groups", frozenset(self.test_groups))
        if not self.train_groups:
            raise ValidationError(f"scenario {self.name!r} has no training groups")
        if self.train_groups & self.test_groups:
            raise ValidationError(f"scenario {self.name!r} trains on its test groups")


def build_scenarios(groups: Sequence[str]) -> list[Scenario]:
    """One leave-one-group-out scenario per group, then the no-holdout scenario."""
    groups = list(groups)
    if len(groups) < 2:
        raise ValidationError("need at least 2 groups to build holdout scenarios")
    seen = set()
    for g in groups:
        if g in seen:
            raise ValidationError(f"duplicate group label {g!r}")
        seen.add(g)
    out = [Scenario(g, frozenset(groups) - {g}, frozenset({g})) for g in groups]
    out.append(Scenario(NO_HOLDOUT, frozenset(groups), frozenset(), external_test=True))
    return out


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class LabelLaw:
    """Synthetic path loss as FSPL plus obstruction penalties (all dB).

    label = fspl(f1, f2) + f3_db_per_m * f3 + f5_db * log10(1 + f5)
            + f7_db * exp(-f7 / f7_scale_m)
    """

    f3_db_per_m: float = 0.08
    f5_db: float = 1.5
    f7_db: float = 0.0
    f7_scale_m: float = 500.0

    def __call__(self, features: np.ndarray) -> np.ndarray:
        from .metrics import fspl

        f = np.atleast_2d(features)
        out = fspl(f[:, 0], f[:, 1]) + self.f3_db_per_m * f[:, 2] + self.f5_db * np.log10(1.0 + f[:, 4])
        if self.f7_db:
            out = out + self.f7_db * np.exp(-f[:, 6] / self.f7_scale_m)
        return out


@dataclass(frozen=True)
class Morphology:
    """Per-group knobs of the synthetic environment generator."""

    terrain_amp_m: float
    urban_density_per_km: float
    rural_density_per_km: float
    building_height_m: tuple[float, float]


SYNTHETIC_GROUPS = {
    "Alpha": Morphology(1.5, 12.0, 0.5, (6.0, 20.0)),
    "Bravo": Morphology(4.0, 6.0, 0.7, (5.0, 15.0)),
    "Charlie": Morphology(2.5, 9.0, 0.5, (6.0, 18.0)),
    "Delta": Morphology(2.0, 10.0, 1.0, (8.0, 24.0)),
    "Echo": Morphology(3.0, 7.0, 0.3, (5.0, 16.0)),
    "Foxtrot": Morphology(2.5, 8.0, 0.7, (6.0, 20.0)),
}


def _synthetic_profile(rng: np.random.Generator, morph: Morphology) -> PathProfile:
    d = float(np.exp(rng.uniform(np.log(250.0), np.log(50_000.0))))
    n = int(round(d / min(max(d / 300.0, 1.0), 50.0))) + 1
    spacing = d / (n - 1)
    x = np.arange(n) * spacing

    terrain = np.full(n, rng.uniform(20.0, 120.0))
    for _ in range(3):
        wavelength = np.exp(rng.uniform(np.log(3_000.0), np.log(60_000.0)))
        terrain += morph.terrain_amp_m * rng.uniform() * np.sin(
            2 * np.pi * x / wavelength + rng.uniform(0, 2 * np.pi)
        )
    # transmitter sites sit on raised ground, more so on long links
    site = rng.uniform(1.0, 2.5) * d * d / (2 * EARTH_RADIUS_M) + rng.uniform(10.0, 40.0)
    width = rng.uniform(0.05, 0.3) * d
    terrain += site * np.exp(-((x / width) ** 2))

    clutter = np.zeros(n)
    urban_extent = min(d, rng.uniform(50.0, 400.0))
    n_urban = rng.poisson(morph.urban_density_per_km * urban_extent / 1000.0)
    n_rural = rng.poisson(morph.rural_density_per_km * d / 1000.0)
    centres = np.concatenate(
        [d - rng.uniform(0.0, urban_extent, n_urban), rng.uniform(0.0, d, n_rural)]
    )
    widths = rng.uniform(8.0, 40.0, centres.size)
    heights = rng.uniform(*morph.building_height_m, centres.size)
    lo = np.clip(np.round((centres - widths / 2) / spacing), 0, n - 1).astype(int)
    hi = np.clip(np.round((centres + widths / 2) / spacing), 0, n - 1).astype(int)
    for a, b, h in zip(lo, hi, heights):
        seg = clutter[a : b + 1]
        np.maximum(seg, h, out=seg)
    # antennas stand in open ground
    clutter[x < 15.0] = 0.0
    clutter[x > d - 15.0] = 0.0

    return PathProfile(
        spacing_m=spacing,
        dsm_m=terrain + clutter,
        dtm_m=terrain,
        tx_height_agl_m=float(rng.uniform(17.0, 25.0)),
        rx_height_agl_m=2.0,
        frequency_mhz=float(rng.choice(UK_FREQUENCIES_MHZ)),
    )


def gen_synthetic(
    n: int,
    seed: int,
    noise_sd_db: float = 0.0,
    groups: Sequence[str] | None = None,
    label_law: LabelLaw | None = None,
) -> list[LinkSample]:
    """Desk-scale stand-in for drive-test data.

    Profiles have smooth sinusoidal terrain, a raised transmitter site and
    rectangular buildings, denser near the receiver. Groups are assigned
    round-robin and each has its own morphology. Labels follow ``label_law``
    evaluated on the extracted features, plus Gaussian noise.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if noise_sd_db < 0:
        raise ValueError("noise_sd_db must be non-negative")
    names = list(groups) if groups is not None else list(SYNTHETIC_GROUPS)
    law = label_law or LabelLaw()
    morphs = list(SYNTHETIC_GROUPS.values())
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = i % len(names)
        profile = _synthetic_profile(rng, morphs[k % len(morphs)])
        fv = extract_features(profile).as_array()
        label = float(law(fv)[0])
        # drawn unconditionally so profiles do not depend on the noise level
        label += noise_sd_db * float(rng.standard_normal())
        out.append(LinkSample(profile, label, names[k]))
    return out


def synthetic_table(
    n: int,
    seed: int,
    noise_sd_db: float = 0.0,
    groups: Sequence[str] | None = None,
    label_law: LabelLaw | None = None,
) -> FeatureTable:
    return FeatureTable.from_samples(gen_synthetic(n, seed, noise_sd_db, groups, label_law))


def dumps_samples(samples: Iterable[LinkSample], fmt: str = "jsonl") -> str:
    buf = io.StringIO()
    write_samples(samples, buf, fmt)
    return buf.getvalue()
