"""Synthetic data, CSV ingestion with the unit-ball preprocessing, and the dataset cache format."""

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from .core import Dataset
from .exceptions import ConfigError, DataFormatError

DEFAULT_SUPPORT = (10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 0.5)
CACHE_MAGIC = "#dpsc-dataset v1"
LABEL_MODES = ("threshold", "bernoulli")


def default_true_w(p):
    """Coefficients (10, 9, 8, 7, 6, 5, 4, 0.5) followed by ``p - 8`` zeros."""
    if p < len(DEFAULT_SUPPORT) + 1:
        raise ConfigError(f"p must be >= {len(DEFAULT_SUPPORT) + 1} to hold the true support, got {p}")
    w = np.zeros(p)
    w[: len(DEFAULT_SUPPORT)] = DEFAULT_SUPPORT
    return w


def cap_row_norms(X, max_norm=1.0):
    """Divide every row whose Euclidean norm exceeds ``max_norm`` by that norm.

    Returns
    -------
    X_capped : ndarray
    n_capped : int
        Number of rows that were rescaled.
    """
    X = np.array(X, dtype=float, copy=True)
    norms = np.linalg.norm(X, axis=1)
    over = norms > max_norm
    X[over] *= (max_norm / norms[over])[:, None]
    return X, int(np.count_nonzero(over))


class RowNormCapper(TransformerMixin, BaseEstimator):
    """Scale down rows with norm above ``max_norm``; other rows pass through.

    Stateless, so ``fit`` only validates its input. Placing it last in a
    preprocessing pipeline guarantees the unit-ball condition the privacy
    analysis needs.
    """

    def __init__(self, max_norm=1.0):
        self.max_norm = max_norm

    def fit(self, X, y=None):
        X = check_array(X)
        if not self.max_norm > 0:
            raise ValueError("max_norm must be > 0")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X)
        X_capped, _ = cap_row_norms(X, self.max_norm)
        return X_capped


@dataclass(frozen=True)
class SynthSpec:
    """Gaussian AR(1) design with a sparse true coefficient vector.

    Parameters
    ----------
    n : int
        Number of observations.
    p : int
        Number of features, at least 9.
    rho : float
        Correlation parameter; the covariance is ``rho ** |j - k|``.
    true_w : tuple of float or None
        Defaults to :func:`default_true_w`.
    seed : int
    label_mode : {"threshold", "bernoulli"}
        ``"threshold"`` sets ``y = +1`` iff ``<w, x> >= 0``; ``"bernoulli"``
        samples ``y`` from the logistic model instead.
    """

    n: int = 11000
    p: int = 100
    rho: float = 0.5
    true_w: tuple = None
    seed: int = 0
    label_mode: str = "threshold"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"n must be an integer >= 1, got {self.n!r}")
        if int(self.p) != self.p or self.p < 9:
            raise ConfigError(f"p must be an integer >= 9, got {self.p!r}")
        if not 0.0 <= self.rho < 1.0:
            raise ConfigError(f"rho must lie in [0, 1), got {self.rho!r}")
        if self.label_mode not in LABEL_MODES:
            raise ConfigError(f"label_mode must be one of {LABEL_MODES}")
        if self.true_w is not None:
            tw = tuple(float(x) for x in self.true_w)
            if len(tw) != self.p:
                raise ConfigError(f"true_w has length {len(tw)}, expected p={self.p}")
            object.__setattr__(self, "true_w", tw)

    def coefficients(self):
        if self.true_w is None:
            return default_true_w(self.p)
        return np.array(self.true_w)

    def to_dict(self):
        return asdict(self)


def ar1_covariance(p, rho):
    idx = np.arange(p)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def synth_generate(spec):
    """Draw a synthetic classification dataset.

    Rows are ``x ~ N(0, Sigma)`` with ``Sigma_jk = rho ** |j - k|``; labels
    are computed from the raw rows and only then are rows with norm above 1
    scaled back onto the unit sphere. Row scaling preserves the sign of
    ``<w, x>``, so it never changes a thresholded label.

    Returns
    -------
    data : Dataset
    true_w : ndarray of shape (p,)
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(spec.seed)))
    true_w = spec.coefficients()
    chol = np.linalg.cholesky(ar1_covariance(spec.p, spec.rho))
    X = rng.standard_normal((spec.n, spec.p)) @ chol.T
    score = X @ true_w
    if spec.label_mode == "threshold":
        y = np.where(score >= 0.0, 1.0, -1.0)
    else:
        y = np.where(rng.uniform(size=spec.n) < expit(score), 1.0, -1.0)
    X, _ = cap_row_norms(X)
    return Dataset(X, y), true_w


def train_test_split(data, test_n, seed, return_index=False):
    """Shuffle under ``seed`` and hold out ``test_n`` rows.

    Returns
    -------
    train, test : Dataset
    train_idx, test_idx : ndarray
        Only when ``return_index`` is true.
    """
    if int(test_n) != test_n or test_n < 1 or test_n >= data.n:
        raise ConfigError(f"test_n must be in [1, n); got {test_n!r} with n={data.n}")
    perm = np.random.default_rng(np.random.SeedSequence(int(seed))).permutation(data.n)
    test_idx = np.sort(perm[: int(test_n)])
    train_idx = np.sort(perm[int(test_n):])
    train, test = data.subset(train_idx), data.subset(test_idx)
    if return_index:
        return train, test, train_idx, test_idx
    return train, test


# --- CSV ingestion -------------------------------------------------------

COLUMN_KINDS = ("numeric", "categorical", "label", "ignore")


@dataclass
class PreprocessReport:
    feature_names: list
    column_scales: dict
    rows_capped: int
    one_hot_map: dict = field(default_factory=dict)


class CsvSchema:
    """Column roles for :func:`load_csv`.

    Parameters
    ----------
    columns : dict
        Column name to one of ``numeric``, ``categorical``, ``label`` or
        ``ignore``. Exactly one column must be the label. Columns present
        in the file but absent here are an error.
    label_map : dict, optional
        Raw label string to -1 or +1. Without it the label column must
        already contain -1/+1 (``1`` and ``+1`` both accepted).
    """

    def __init__(self, columns, label_map=None):
        self.columns = dict(columns)
        bad = {k: v for k, v in self.columns.items() if v not in COLUMN_KINDS}
        if bad:
            raise ConfigError(f"unknown column kinds: {bad}")
        labels = [k for k, v in self.columns.items() if v == "label"]
        if len(labels) != 1:
            raise ConfigError("schema must name exactly one label column")
        self.label = labels[0]
        self.label_map = None
        if label_map is not None:
            self.label_map = {str(k): int(v) for k, v in label_map.items()}
            if not set(self.label_map.values()) <= {-1, 1}:
                raise ConfigError("label_map values must be -1 or +1")

    @classmethod
    def from_dict(cls, d):
        return cls(d["columns"], d.get("label_map"))

    def to_dict(self):
        return {"columns": dict(self.columns), "label_map": self.label_map}


class CsvPreprocessor:
    """One-hot encoding, max-abs column scaling and row-norm capping.

    ``fit`` learns the category levels and column scales from one file's
    rows; ``transform`` applies them to any file with the same header,
    rejecting categories it has not seen.
    """

    def __init__(self, schema):
        self.schema = schema

    def fit(self, header, rows):
        self._check_header(header)
        self.header_ = list(header)
        self.categories_ = {}
        for col, kind in self.schema.columns.items():
            if kind == "categorical":
                j = header.index(col)
                self.categories_[col] = sorted({r[j] for r in rows})
        raw = self._raw_matrix(header, rows, fitting=True)
        scales = np.max(np.abs(raw), axis=0) if raw.shape[0] else np.ones(raw.shape[1])
        self.scales_ = np.where(scales > 0, scales, 1.0)
        return self

    def _check_header(self, header):
        missing = [c for c in self.schema.columns if c not in header]
        if missing:
            raise DataFormatError(f"columns missing from file: {missing}", row=1)
        extra = [c for c in header if c not in self.schema.columns]
        if extra:
            raise DataFormatError(f"columns not described by the schema: {extra}", row=1)

    def feature_names(self):
        names = []
        for col in self.header_:
            kind = self.schema.columns[col]
            if kind == "numeric":
                names.append(col)
            elif kind == "categorical":
                names.extend(f"{col}={lvl}" for lvl in self.categories_[col])
        return names

    def _raw_matrix(self, header, rows, fitting=False):
        names = self.feature_names()
        X = np.zeros((len(rows), len(names)))
        for i, r in enumerate(rows):
            line = i + 2
            out = 0
            for j, col in enumerate(header):
                kind = self.schema.columns[col]
                cell = r[j]
                if kind == "numeric":
                    try:
                        val = float(cell)
                    except ValueError:
                        raise DataFormatError(f"non-numeric value {cell!r}", row=line, column=col) from None
                    if not np.isfinite(val):
                        raise DataFormatError(f"non-finite value {cell!r}", row=line, column=col)
                    X[i, out] = val
                    out += 1
                elif kind == "categorical":
                    levels = self.categories_[col]
                    try:
                        k = levels.index(cell)
                    except ValueError:
                        raise DataFormatError(f"unknown category {cell!r}", row=line, column=col) from None
                    X[i, out + k] = 1.0
                    out += len(levels)
        return X

    def _labels(self, header, rows):
        j = header.index(self.schema.label)
        y = np.empty(len(rows))
        for i, r in enumerate(rows):
            cell = r[j].strip()
            if cell == "":
                raise DataFormatError("missing label", row=i + 2, column=self.schema.label)
            if self.schema.label_map is not None:
                if cell not in self.schema.label_map:
                    raise DataFormatError(f"label {cell!r} not in label_map", row=i + 2,
                                          column=self.schema.label)
                y[i] = self.schema.label_map[cell]
            else:
                try:
                    val = float(cell)
                except ValueError:
                    val = None
                if val not in (-1.0, 1.0):
                    raise DataFormatError(f"label {cell!r} is not -1 or +1", row=i + 2,
                                          column=self.schema.label)
                y[i] = val
        return y

    def transform(self, header, rows):
        self._check_header(header)
        if list(header) != self.header_:
            raise DataFormatError("header differs from the fitted file", row=1)
        X = self._raw_matrix(header, rows) / self.scales_
        y = self._labels(header, rows)
        X, n_capped = cap_row_norms(X)
        one_hot = {col: [f"{col}={lvl}" for lvl in lv] for col, lv in self.categories_.items()}
        names = self.feature_names()
        report = PreprocessReport(
            feature_names=names,
            column_scales={nm: float(s) for nm, s in zip(names, self.scales_)},
            rows_capped=n_capped,
            one_hot_map=one_hot,
        )
        return Dataset(X, y), report


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path} is empty") from None
        rows = []
        for i, r in enumerate(reader):
            if not r:
                continue
            if len(r) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, found {len(r)}", row=i + 2)
            rows.append(r)
    if not rows:
        raise DataFormatError(f"{path} has no data rows")
    return [h.strip() for h in header], rows


def load_csv(path, schema, preprocessor=None):
    """Read a comma-separated file and preprocess it into a :class:`Dataset`.

    Parameters
    ----------
    path : str or path-like
        UTF-8, comma-separated, header on the first line, ``.`` decimals.
    schema : CsvSchema or dict
    preprocessor : CsvPreprocessor, optional
        A preprocessor fitted on training data. When omitted, one is fitted
        on this file.

    Returns
    -------
    data : Dataset
    report : PreprocessReport
    preprocessor : CsvPreprocessor
        The fitted preprocessor, for transforming further files.

    Raises
    ------
    DataFormatError
        Unknown category, non-numeric numeric cell, bad or missing label;
        the message carries the line number and column.
    """
    if isinstance(schema, dict):
        schema = CsvSchema.from_dict(schema)
    header, rows = _read_csv(path)
    if preprocessor is None:
        preprocessor = CsvPreprocessor(schema).fit(header, rows)
    data, report = preprocessor.transform(header, rows)
    return data, report, preprocessor


# --- dataset cache ---------------------------------------------------------

def write_dataset(path, data, meta=None):
    """Write the cache format: a magic header line, then ``y,x1,...,xp`` rows.

    Floats are written with ``repr`` so a round trip is exact. ``meta``, if
    given, goes to a ``<path>.meta.json`` sidecar.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"{CACHE_MAGIC} n={data.n} p={data.p}\n")
        for yi, xi in zip(data.labels, data.features):
            fh.write(("1" if yi > 0 else "-1") + "," + ",".join(repr(float(v)) for v in xi) + "\n")
    if meta is not None:
        with open(sidecar_path(path), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def sidecar_path(path):
    return os.fspath(path) + ".meta.json"


def read_dataset(path):
    """Inverse of :func:`write_dataset`; returns ``(data, meta_or_None)``."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(CACHE_MAGIC):
            raise DataFormatError(f"{path} is not a dpsc dataset file", row=1)
        try:
            fields_ = dict(tok.split("=") for tok in first[len(CACHE_MAGIC):].split())
            n, p = int(fields_["n"]), int(fields_["p"])
        except (ValueError, KeyError):
            raise DataFormatError("bad dataset header", row=1) from None
        y = np.empty(n)
        X = np.empty((n, p))
        i = -1
        for i, line in enumerate(fh):
            if i >= n:
                raise DataFormatError("more rows than the header declares", row=i + 2)
            parts = line.rstrip("\n").split(",")
            if len(parts) != p + 1:
                raise DataFormatError(f"expected {p + 1} fields, found {len(parts)}", row=i + 2)
            try:
                y[i] = float(parts[0])
                X[i] = [float(v) for v in parts[1:]]
            except ValueError:
                raise DataFormatError("non-numeric field", row=i + 2) from None
        if i + 1 != n:
            raise DataFormatError(f"header declares n={n} but file has {i + 1} rows")
    meta = None
    if os.path.exists(sidecar_path(path)):
        with open(sidecar_path(path), encoding="utf-8") as fh:
            meta = json.load(fh)
    return Dataset(X, y), meta
