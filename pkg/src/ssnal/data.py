"""LIBSVM-format dataset ingestion, unit-box scaling and train/test splits."""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParseError


@dataclass
class Dataset:
    """Dense feature matrix plus per-sample targets (labels or responses)."""

    features: np.ndarray
    targets: np.ndarray

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def q(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx].copy(), self.targets[idx].copy())


def parse_libsvm(path, n_features=None):
    """Parse a sparse ``label idx:val ...`` text file into a Dataset.

    Blank lines and ``#`` comments are tolerated.  Feature indices are
    1-based on disk and must be strictly increasing within a row; the feature
    dimension is the largest index seen unless ``n_features`` overrides it.
    Malformed input raises ParseError with the offending line and column.
    """
    labels = []
    rows = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                label = float(tokens[0])
            except ValueError:
                raise ParseError(f"non-numeric label {tokens[0]!r}", line=lineno, column=1)
            entries = []
            previous = 0
            for col, token in enumerate(tokens[1:], start=2):
                index_text, sep, value_text = token.partition(":")
                if not sep:
                    raise ParseError(f"expected idx:val, got {token!r}", line=lineno, column=col)
                try:
                    index = int(index_text)
                    value = float(value_text)
                except ValueError:
                    raise ParseError(f"non-numeric token {token!r}", line=lineno, column=col)
                if index <= previous:
                    raise ParseError(
                        f"feature index {index} not increasing", line=lineno, column=col
                    )
                previous = index
                entries.append((index, value))
            labels.append(label)
            rows.append(entries)
            if previous > max_index:
                max_index = previous
    if not labels:
        raise ParseError("no data lines found", line=1)
    q = max_index if n_features is None else int(n_features)
    features = np.zeros((len(rows), q))
    for i, entries in enumerate(rows):
        for index, value in entries:
            if index <= q:
                features[i, index - 1] = value
            elif n_features is None:
                raise ParseError(f"feature index {index} exceeds dimension {q}")
    return Dataset(features=features, targets=np.asarray(labels))


def write_libsvm(dataset, path):
    """Write in sparse LIBSVM text form; floats use repr so parsing round-trips."""
    with open(path, "w", encoding="utf-8") as handle:
        for i in range(dataset.n):
            parts = [format(dataset.targets[i], ".17g")]
            row = dataset.features[i]
            for j in np.flatnonzero(row):
                parts.append(f"{j + 1}:{format(row[j], '.17g')}")
            handle.write(" ".join(parts) + "\n")


@dataclass
class BoxScaler:
    """Per-column affine map to [0, 1] fitted on training data.

    Constant columns map to zero.  When ``clamp`` is set, transformed values
    are clipped back into [0, 1] (used for test features: the training box is
    the model's domain).
    """

    col_min: np.ndarray
    col_span: np.ndarray

    def transform(self, values, clamp=False):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        span = np.where(self.col_span > 0, self.col_span, 1.0)
        out = (values - self.col_min[None, :]) / span[None, :]
        out[:, self.col_span == 0] = 0.0
        if clamp:
            np.clip(out, 0.0, 1.0, out=out)
        return out

    def inverse(self, values):
        return np.asarray(values, dtype=float) * self.col_span + self.col_min


def fit_unit_scaler(values):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    col_min = values.min(axis=0)
    col_span = values.max(axis=0) - col_min
    return BoxScaler(col_min=col_min, col_span=col_span)


def scale_unit_box(dataset):
    """Scale each feature to [0, 1]; returns the scaled data and the record.

    Reapply the returned scaler to test data with ``clamp=True``.
    """
    if dataset.n < 1:
        raise InputError("empty dataset")
    scaler = fit_unit_scaler(dataset.features)
    return Dataset(scaler.transform(dataset.features), dataset.targets.copy()), scaler


def split_train_test(dataset, fraction=0.8, seed=0):
    """Seeded uniform split into disjoint train/test covering all samples."""
    if not 0.0 < fraction < 1.0:
        raise InputError("fraction must be strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(dataset.n)
    n_train = int(round(dataset.n * fraction))
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])


def conform_features(dataset, q):
    """Pad with zero columns or drop trailing ones so the width equals ``q``.

    Test files routinely omit features never active in them; features unseen
    at training time carry no model information and are dropped.
    """
    if dataset.q == q:
        return dataset
    if dataset.q < q:
        padded = np.zeros((dataset.n, q))
        padded[:, : dataset.q] = dataset.features
        return Dataset(padded, dataset.targets.copy())
    return Dataset(dataset.features[:, :q].copy(), dataset.targets.copy())
