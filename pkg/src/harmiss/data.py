"""Loading, validation and task splits for the UCI HAR feature files.

Only the 561 engineered features are read; the ``Inertial Signals``
subdirectories are ignored.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

N_FEATURES = 561
N_ACTIVITIES = 6
N_SUBJECTS = 30

ACTIVITY_NAMES = {
    1: "WALKING",
    2: "WALKING_UPSTAIRS",
    3: "WALKING_DOWNSTAIRS",
    4: "SITTING",
    5: "STANDING",
    6: "LAYING",
}

ACC_TOKEN = "Acc"
GYRO_TOKEN = "Gyro"
OFFICIAL_GROUP_COUNTS = (345, 213)
MAX_SPLIT_RETRIES = 100


class HarDataError(Exception):
    """Base class for dataset problems."""


class LoadError(HarDataError):
    pass


class ParseError(HarDataError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class ValidationError(HarDataError):
    pass


class SplitError(HarDataError):
    pass


class CalibrationError(HarDataError):
    pass


@dataclass(frozen=True, eq=False)
class HarDataset:
    """Feature matrix with row-aligned activity labels and subject ids.

    ``row_ids`` identifies each row in the combined (train then test) file
    order so that subsets can always be traced back to their source line.
    """

    features: np.ndarray
    activity_labels: np.ndarray
    subject_ids: np.ndarray
    feature_names: tuple[str, ...]
    row_ids: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.activity_labels, dtype=np.int64)
        s = np.asarray(self.subject_ids, dtype=np.int64)
        rid = np.arange(len(X)) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "activity_labels", y)
        object.__setattr__(self, "subject_ids", s)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "row_ids", rid)
        validate_dataset(self)

    def __len__(self):
        return len(self.features)

    @property
    def n_features(self):
        return self.features.shape[1]

    def take(self, indices) -> "HarDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return HarDataset(
            self.features[idx],
            self.activity_labels[idx],
            self.subject_ids[idx],
            self.feature_names,
            self.row_ids[idx],
        )

    def with_features(self, features) -> "HarDataset":
        """Same rows and labels with a replacement feature matrix.

        The replacement may have a different width (e.g. after PCA); names
        are regenerated in that case.
        """
        features = np.asarray(features, dtype=np.float64)
        names = self.feature_names
        if features.shape[1] != len(names):
            names = tuple(f"component_{j}" for j in range(features.shape[1]))
        return HarDataset(features, self.activity_labels, self.subject_ids, names, self.row_ids)


def concat(first: HarDataset, second: HarDataset) -> HarDataset:
    if first.feature_names != second.feature_names:
        raise ValidationError("cannot concatenate datasets with different feature names")
    return HarDataset(
        np.vstack([first.features, second.features]),
        np.concatenate([first.activity_labels, second.activity_labels]),
        np.concatenate([first.subject_ids, second.subject_ids]),
        first.feature_names,
        np.concatenate([first.row_ids, second.row_ids]),
    )


def validate_dataset(ds: HarDataset, *, expected_width: int | None = None) -> None:
    X = ds.features
    if X.ndim != 2:
        raise ValidationError(f"features must be 2-D, got shape {X.shape}")
    n = X.shape[0]
    if len(ds.activity_labels) != n or len(ds.subject_ids) != n or len(ds.row_ids) != n:
        raise ValidationError(
            f"row count mismatch: {n} feature rows, {len(ds.activity_labels)} labels, "
            f"{len(ds.subject_ids)} subject ids"
        )
    if len(ds.feature_names) != X.shape[1]:
        raise ValidationError(f"{X.shape[1]} columns but {len(ds.feature_names)} feature names")
    if expected_width is not None and X.shape[1] != expected_width:
        raise ValidationError(f"expected {expected_width} columns, got {X.shape[1]}")
    bad = (ds.activity_labels < 1) | (ds.activity_labels > N_ACTIVITIES)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"activity label {ds.activity_labels[i]} at row {i} outside 1..{N_ACTIVITIES}")
    bad = (ds.subject_ids < 1) | (ds.subject_ids > N_SUBJECTS)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ValidationError(f"subject id {ds.subject_ids[i]} at row {i} outside 1..{N_SUBJECTS}")


# --------------------------------------------------------------------------
# parsing


def _require(path: Path) -> Path:
    if not path.is_file():
        raise LoadError(f"missing file: {path}")
    return path


def _data_lines(path: Path):
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    return lines


def parse_feature_matrix(path, width: int = N_FEATURES) -> np.ndarray:
    """Parse a whitespace-separated matrix, one row per line."""
    path = _require(Path(path))
    lines = _data_lines(path)
    out = np.empty((len(lines), width), dtype=np.float64)
    for i, line in enumerate(lines):
        fields = line.split()
        if len(fields) != width:
            raise ParseError(path, i + 1, f"expected {width} fields, found {len(fields)}")
        try:
            out[i] = [float(v) for v in fields]
        except ValueError as exc:
            raise ParseError(path, i + 1, f"unparseable number ({exc})") from None
    return out


def parse_int_column(path) -> np.ndarray:
    path = _require(Path(path))
    values = []
    for i, line in enumerate(_data_lines(path)):
        fields = line.split()
        if len(fields) != 1:
            raise ParseError(path, i + 1, f"expected 1 field, found {len(fields)}")
        try:
            values.append(int(fields[0]))
        except ValueError:
            raise ParseError(path, i + 1, f"not an integer: {fields[0]!r}") from None
    return np.asarray(values, dtype=np.int64)


def parse_feature_names(path) -> tuple[str, ...]:
    """Read ``features.txt`` lines of the form ``<index> <name>``."""
    path = _require(Path(path))
    names = []
    for i, line in enumerate(_data_lines(path)):
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise ParseError(path, i + 1, "expected '<index> <name>'")
        try:
            idx = int(parts[0])
        except ValueError:
            raise ParseError(path, i + 1, f"bad feature index {parts[0]!r}") from None
        if idx != i + 1:
            raise ParseError(path, i + 1, f"feature index {idx} out of sequence")
        names.append(parts[1].strip())
    if len(names) != N_FEATURES:
        raise ValidationError(f"{path}: expected {N_FEATURES} feature names, found {len(names)}")
    return tuple(names)


def _load_part(root: Path, part: str, names, row_offset: int) -> HarDataset:
    X = parse_feature_matrix(root / part / f"X_{part}.txt")
    y = parse_int_column(root / part / f"y_{part}.txt")
    s = parse_int_column(root / part / f"subject_{part}.txt")
    if not (len(X) == len(y) == len(s)):
        raise ValidationError(
            f"{part}: X has {len(X)} rows, y has {len(y)}, subject has {len(s)}"
        )
    return HarDataset(X, y, s, names, np.arange(row_offset, row_offset + len(X)))


def default_data_dir() -> Path | None:
    value = os.environ.get("HAR_DATA_DIR")
    return Path(value) if value else None


def load_uci_har(root_dir=None) -> tuple[HarDataset, HarDataset]:
    """Load the predefined train and test splits.

    Args:
        root_dir: directory holding ``features.txt``, ``train/`` and
            ``test/``. Defaults to ``$HAR_DATA_DIR``.

    Returns:
        ``(train, test)`` with rows in file order. ``row_ids`` of the test
        part continue after the last train row.
    """
    if root_dir is None:
        root_dir = default_data_dir()
        if root_dir is None:
            raise LoadError("no data directory given and HAR_DATA_DIR is not set")
    root = Path(root_dir)
    if not root.is_dir():
        raise LoadError(f"data directory not found: {root}")
    names = parse_feature_names(root / "features.txt")
    train = _load_part(root, "train", names, 0)
    test = _load_part(root, "test", names, len(train))
    return train, test


def dataset_checksum(*parts: HarDataset) -> str:
    h = hashlib.sha256()
    for ds in parts:
        h.update(np.ascontiguousarray(ds.features).tobytes())
        h.update(ds.activity_labels.tobytes())
        h.update(ds.subject_ids.tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitConfig:
    test_fraction: float = 0.2
    seed: int = 0
    stratify_by: str = "none"

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.stratify_by not in ("none", "subject"):
            raise ValueError(f"stratify_by must be 'none' or 'subject', got {self.stratify_by!r}")


def _stratified_test_rows(subjects, n_test, rng):
    groups = {s: np.flatnonzero(subjects == s) for s in np.unique(subjects)}
    keys = sorted(groups)
    sizes = np.array([len(groups[k]) for k in keys])
    quota = sizes * (n_test / len(subjects))
    alloc = np.floor(quota).astype(int)
    # largest remainder, ties to the lower subject id
    order = np.lexsort((np.arange(len(keys)), -(quota - alloc)))
    for j in order[: n_test - alloc.sum()]:
        alloc[j] += 1
    alloc = np.clip(alloc, np.minimum(1, sizes - 1), np.maximum(sizes - 1, 0))
    picked = [rng.permutation(groups[k])[:a] for k, a in zip(keys, alloc)]
    return np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.int64)


def split_indices(subject_ids: np.ndarray, cfg: SplitConfig) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/test row indices with every subject on both sides.

    Both index arrays are sorted, so outputs keep the input row order.
    """
    subject_ids = np.asarray(subject_ids)
    n = len(subject_ids)
    n_test = int(round(cfg.test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise SplitError(f"test_fraction {cfg.test_fraction} leaves an empty side on {n} rows")
    wanted = set(np.unique(subject_ids).tolist())
    rng = np.random.default_rng(cfg.seed)
    for _ in range(MAX_SPLIT_RETRIES):
        if cfg.stratify_by == "subject":
            test_idx = _stratified_test_rows(subject_ids, n_test, rng)
        else:
            test_idx = np.sort(rng.permutation(n)[:n_test])
        is_test = np.zeros(n, dtype=bool)
        is_test[test_idx] = True
        train_idx = np.flatnonzero(~is_test)
        if set(subject_ids[train_idx].tolist()) == wanted and set(subject_ids[test_idx].tolist()) == wanted:
            return train_idx, test_idx
    raise SplitError(
        f"could not place every subject on both sides after {MAX_SPLIT_RETRIES} draws "
        f"(stratify_by={cfg.stratify_by!r})"
    )


def merge_and_split(train: HarDataset, test: HarDataset, cfg: SplitConfig) -> tuple[HarDataset, HarDataset]:
    """Pool both official parts and re-split them for subject recognition."""
    combined = concat(train, test)
    tr, te = split_indices(combined.subject_ids, cfg)
    return combined.take(tr), combined.take(te)


# --------------------------------------------------------------------------
# feature groups


@dataclass(frozen=True)
class FeatureGroups:
    """Partition of the feature columns by originating sensor.

    ``dual_columns`` holds names that mention both sensor tokens. They are
    counted once (under the token that appears first in the name) but are
    blanked by outages of either sensor.
    """

    acc_columns: frozenset
    gyro_columns: frozenset
    neither_columns: frozenset
    dual_columns: frozenset = frozenset()
    rule: str = ""
    notes: tuple = field(default_factory=tuple)

    def columns_for(self, sensor: str) -> np.ndarray:
        if sensor == "Acc":
            cols = self.acc_columns | self.dual_columns
        elif sensor == "Gyro":
            cols = self.gyro_columns | self.dual_columns
        elif sensor == "Both":
            cols = self.acc_columns | self.gyro_columns
        else:
            raise ValueError(f"unknown sensor {sensor!r}")
        return np.array(sorted(cols), dtype=np.int64)

    def metadata(self) -> dict:
        return {
            "rule": self.rule,
            "acc": len(self.acc_columns),
            "gyro": len(self.gyro_columns),
            "neither": len(self.neither_columns),
            "dual_columns": sorted(self.dual_columns),
            "notes": list(self.notes),
        }


GROUP_RULE = (
    f"case-sensitive substring match: names containing {ACC_TOKEN!r} are accelerometer, "
    f"names containing {GYRO_TOKEN!r} are gyroscope; names with both tokens count under the "
    "token that occurs first and are blanked by either sensor's outage; the rest are neither"
)


def derive_feature_groups(feature_names: Sequence[str], expected=OFFICIAL_GROUP_COUNTS) -> FeatureGroups:
    """Classify columns into accelerometer / gyroscope / neither.

    Args:
        feature_names: one name per column.
        expected: ``(n_acc, n_gyro)`` the classification must reproduce, or
            ``None`` to skip the check. Only meaningful for the official
            561-name vocabulary.

    Raises:
        CalibrationError: counts differ from ``expected``.
    """
    acc, gyro, neither, dual = set(), set(), set(), set()
    notes = []
    for j, name in enumerate(feature_names):
        a = name.find(ACC_TOKEN)
        g = name.find(GYRO_TOKEN)
        if a >= 0 and g >= 0:
            dual.add(j)
            (acc if a < g else gyro).add(j)
            notes.append(f"{j}:{name} mentions both sensors")
        elif a >= 0:
            acc.add(j)
        elif g >= 0:
            gyro.add(j)
        else:
            neither.add(j)
            if "gravity" in name.lower():
                notes.append(f"{j}:{name} references gravity only; kept out of both sensor groups")
        if g >= 0 and a < 0 and "gravity" in name.lower():
            notes.append(f"{j}:{name} relates gyroscope to gravity; counted as gyroscope")
    if expected is not None and len(feature_names) == N_FEATURES:
        n_acc, n_gyro = expected
        if len(acc) != n_acc or len(gyro) != n_gyro:
            acc_names = [feature_names[j] for j in sorted(acc)]
            gyro_names = [feature_names[j] for j in sorted(gyro)]
            raise CalibrationError(
                f"feature grouping gave {len(acc)} accelerometer / {len(gyro)} gyroscope columns, "
                f"expected {n_acc} / {n_gyro}; accelerometer={acc_names}; gyroscope={gyro_names}"
            )
    return FeatureGroups(
        frozenset(acc), frozenset(gyro), frozenset(neither), frozenset(dual), GROUP_RULE, tuple(notes)
    )


# --------------------------------------------------------------------------
# optional standardization


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "Standardizer":
        X = np.asarray(X, dtype=np.float64)
        sd = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(sd > 0, sd, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


# --------------------------------------------------------------------------
# official feature-name vocabulary

_AXES = ("X", "Y", "Z")
_BANDS = ("1,8", "9,16", "17,24", "25,32", "33,40", "41,48", "49,56", "57,64",
          "1,16", "17,32", "33,48", "49,64", "1,24", "25,48")


def _time_xyz(sig):
    out = []
    for stat in ("mean", "std", "mad", "max", "min"):
        out += [f"{sig}-{stat}()-{a}" for a in _AXES]
    out.append(f"{sig}-sma()")
    for stat in ("energy", "iqr", "entropy"):
        out += [f"{sig}-{stat}()-{a}" for a in _AXES]
    out += [f"{sig}-arCoeff()-{a},{k}" for a in _AXES for k in range(1, 5)]
    out += [f"{sig}-correlation()-{p}" for p in ("X,Y", "X,Z", "Y,Z")]
    return out


def _time_mag(sig):
    out = [f"{sig}-{stat}()" for stat in ("mean", "std", "mad", "max", "min", "sma", "energy", "iqr", "entropy")]
    return out + [f"{sig}-arCoeff(){k}" for k in range(1, 5)]


def _freq_xyz(sig):
    out = []
    for stat in ("mean", "std", "mad", "max", "min"):
        out += [f"{sig}-{stat}()-{a}" for a in _AXES]
    out.append(f"{sig}-sma()")
    for stat in ("energy", "iqr", "entropy"):
        out += [f"{sig}-{stat}()-{a}" for a in _AXES]
    out += [f"{sig}-maxInds-{a}" for a in _AXES]
    out += [f"{sig}-meanFreq()-{a}" for a in _AXES]
    for a in _AXES:
        out += [f"{sig}-skewness()-{a}", f"{sig}-kurtosis()-{a}"]
    out += [f"{sig}-bandsEnergy()-{b}" for _ in _AXES for b in _BANDS]
    return out


def _freq_mag(sig):
    stats = ("mean", "std", "mad", "max", "min", "sma", "energy", "iqr", "entropy")
    return [f"{sig}-{s}()" for s in stats] + [f"{sig}-maxInds", f"{sig}-meanFreq()",
                                               f"{sig}-skewness()", f"{sig}-kurtosis()"]


def official_feature_names() -> tuple[str, ...]:
    """The 561 feature names in ``features.txt`` order."""
    names = []
    for sig in ("tBodyAcc", "tGravityAcc", "tBodyAccJerk", "tBodyGyro", "tBodyGyroJerk"):
        names += _time_xyz(sig)
    for sig in ("tBodyAccMag", "tGravityAccMag", "tBodyAccJerkMag", "tBodyGyroMag", "tBodyGyroJerkMag"):
        names += _time_mag(sig)
    for sig in ("fBodyAcc", "fBodyAccJerk", "fBodyGyro"):
        names += _freq_xyz(sig)
    for sig in ("fBodyAccMag", "fBodyBodyAccJerkMag", "fBodyBodyGyroMag", "fBodyBodyGyroJerkMag"):
        names += _freq_mag(sig)
    names += [
        "angle(tBodyAccMean,gravity)",
        "angle(tBodyAccJerkMean),gravityMean)",
        "angle(tBodyGyroMean,gravityMean)",
        "angle(tBodyGyroJerkMean,gravityMean)",
        "angle(X,gravityMean)",
        "angle(Y,gravityMean)",
        "angle(Z,gravityMean)",
    ]
    assert len(names) == N_FEATURES
    return tuple(names)
