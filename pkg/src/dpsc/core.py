"""Problem data model: datasets, losses, penalties and the Z-step operators.

Everything here is a pure function of its inputs. The ADMM splitting keeps
the penalty on an auxiliary copy ``z`` of the weights, so the sparse step
never touches the data and reduces to coordinatewise thresholding of
``q = w - v / c``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError

ROW_NORM_TOL = 1e-12

L1 = "l1"
LHALF = "lhalf"
_PENALTY_ALIASES = {
    "l1": L1,
    "lasso": L1,
    "lhalf": LHALF,
    "l1/2": LHALF,
    "l1_2": LHALF,
    "half": LHALF,
}


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with +/-1 labels and rows inside the unit ball.

    Parameters
    ----------
    features : array-like of shape (n, p)
    labels : array-like of shape (n,)
        Entries must be -1 or +1.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ConfigError(f"features must be a non-empty 2-D array, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ConfigError(
                f"labels must have shape ({X.shape[0]},), got {y.shape}"
            )
        if not np.all(np.isfinite(X)):
            raise ConfigError("features contain non-finite values")
        if not np.all((y == 1.0) | (y == -1.0)):
            raise ConfigError("labels must be -1 or +1")
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms > 1.0 + ROW_NORM_TOL):
            i = int(np.argmax(norms))
            raise ConfigError(
                f"row {i} has norm {norms[i]:.6g} > 1; cap rows before building a Dataset"
            )
        object.__setattr__(self, "features", _readonly(X))
        object.__setattr__(self, "labels", _readonly(y))

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    def subset(self, index):
        index = np.asarray(index)
        return Dataset(self.features[index], self.labels[index])

    def margins(self, w):
        """Return ``y_i * <w, x_i>`` for every row."""
        return self.labels * (self.features @ w)


@dataclass(frozen=True)
class LossSpec:
    """Smooth margin loss together with its derivative bounds.

    ``c1`` bounds ``|O'|`` and ``c2`` bounds ``O''`` uniformly; the privacy
    accounting only ever uses these two numbers.
    """

    kind: str = "logistic"
    c1: float = 1.0
    c2: float = 0.25

    def __post_init__(self):
        if self.kind != "logistic":
            raise ConfigError(f"unsupported loss kind {self.kind!r}")
        for name in ("c1", "c2"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be finite and positive, got {val!r}")

    def value(self, margin):
        return logistic_loss(margin)

    def derivative(self, margin):
        return logistic_loss_derivative(margin)

    def second_derivative(self, margin):
        s = expit(margin)
        return s * (1.0 - s)


LOGISTIC = LossSpec()


@dataclass(frozen=True)
class PenaltySpec:
    """Sparsity penalty: ``l1`` (lasso) or ``lhalf`` (the 1/2 quasi-norm).

    Parameters
    ----------
    kind : {"l1", "lhalf"}
    lam : float
        Regularization weight, >= 0.
    mu : float
        Smoothing offset in the reweighting denominator (``lhalf`` only).
    reweight_steps : int
        Number of reweighted-L1 rounds per Z-step (``lhalf`` only).
    """

    kind: str = L1
    lam: float = 0.0
    mu: float = 1e-4
    reweight_steps: int = 5

    def __post_init__(self):
        kind = _PENALTY_ALIASES.get(str(self.kind).lower())
        if kind is None:
            raise ConfigError(f"unknown penalty kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if not (np.isfinite(self.lam) and self.lam >= 0):
            raise ConfigError(f"lambda must be finite and >= 0, got {self.lam!r}")
        if kind == LHALF:
            if not self.mu > 0:
                raise ConfigError(f"mu must be > 0, got {self.mu!r}")
            if int(self.reweight_steps) != self.reweight_steps or self.reweight_steps < 1:
                raise ConfigError(
                    f"reweight_steps must be an integer >= 1, got {self.reweight_steps!r}"
                )

    @classmethod
    def l1(cls, lam):
        return cls(L1, lam)

    @classmethod
    def lhalf(cls, lam, mu=1e-4, reweight_steps=5):
        return cls(LHALF, lam, mu, reweight_steps)

    def value(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == L1:
            return self.lam * float(np.sum(np.abs(w)))
        return self.lam * float(np.sum(np.sqrt(np.abs(w))))


@dataclass
class AdmmState:
    """ADMM iterate: sparse copy ``z``, smooth weights ``w``, scaled dual ``v``."""

    z: np.ndarray
    w: np.ndarray
    v: np.ndarray
    k: int = 0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if not (self.z.ndim == self.w.ndim == self.v.ndim == 1):
            raise ConfigError("state vectors must be 1-D")
        if not (self.z.shape == self.w.shape == self.v.shape):
            raise ConfigError(
                f"state vectors differ in length: {self.z.shape}, {self.w.shape}, {self.v.shape}"
            )
        if self.k < 0:
            raise ConfigError("iteration index must be >= 0")
        if not (np.all(np.isfinite(self.z)) and np.all(np.isfinite(self.w))
                and np.all(np.isfinite(self.v))):
            raise ConfigError("state contains non-finite entries")

    @property
    def p(self):
        return self.w.shape[0]

    def copy(self):
        return AdmmState(self.z.copy(), self.w.copy(), self.v.copy(), self.k)


def logistic_loss(margin):
    """``log(1 + exp(-margin))``, stable for any finite margin."""
    out = np.logaddexp(0.0, -np.asarray(margin, dtype=float))
    return float(out) if out.ndim == 0 else out


def logistic_loss_derivative(margin):
    """``-1 / (1 + exp(margin))``; always in (-1, 0)."""
    out = -expit(-np.asarray(margin, dtype=float))
    return float(out) if out.ndim == 0 else out


def soft_threshold(q, t):
    """Proximal map of ``t * |.|``: shrink ``q`` toward zero by ``t``.

    Works elementwise; ``t`` may be an array (per-coordinate thresholds) and
    may contain ``inf``, which maps the coordinate to exactly zero.
    """
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise ConfigError("threshold must be >= 0")
    out = np.sign(q) * np.maximum(np.abs(q) - t, 0.0) + 0.0
    return float(out) if out.ndim == 0 else out


def _check_c(c):
    if not c > 0:
        raise ConfigError(f"ADMM penalty coefficient c must be > 0, got {c!r}")


def z_update_l1(w, v, lam, c):
    """Exact Z-step for the L1 penalty: soft-threshold ``w - v/c`` at ``lam/c``."""
    _check_c(c)
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    if w.shape != v.shape:
        raise ConfigError(f"w and v differ in shape: {w.shape} vs {v.shape}")
    return soft_threshold(w - v / c, lam / c)


def z_update_lhalf(w, v, penalty, c):
    """Z-step for the 1/2 quasi-norm by iteratively reweighted soft-thresholding.

    Starting from ``z = (1, ..., 1)``, each of ``penalty.reweight_steps``
    rounds minimizes the separable weighted-L1 majorizer

        (c/2) ||z - q||^2 + lam * sum_i |z_i| / (2 sqrt(|z_i^t + mu|))

    in closed form, where ``q = w - v/c``. The majorizer is tangent to
    ``lam * sqrt(|z_i|)`` at the previous round, so its fixed points are
    stationary points of the true Z-subproblem.

    Parameters
    ----------
    w, v : ndarray of shape (p,)
    penalty : PenaltySpec
        Must have ``kind == "lhalf"``.
    c : float

    Returns
    -------
    ndarray of shape (p,)
    """
    _check_c(c)
    if penalty.kind != LHALF:
        raise ConfigError("z_update_lhalf needs an lhalf penalty")
    w = np.asarray(w, dtype=float)
    v = np.asarray(v, dtype=float)
    if w.shape != v.shape:
        raise ConfigError(f"w and v differ in shape: {w.shape} vs {v.shape}")
    q = w - v / c
    z = np.ones_like(q)
    scale = penalty.lam / (2.0 * c)
    for _ in range(int(penalty.reweight_steps)):
        with np.errstate(divide="ignore"):
            # |z + mu| == 0 gives an infinite threshold, i.e. z stays at 0
            thresh = scale / np.sqrt(np.abs(z + penalty.mu))
        if penalty.lam == 0:
            thresh = np.zeros_like(q)
        z = soft_threshold(q, thresh)
    return z


def z_update(w, v, penalty, c):
    """Dispatch the Z-step on ``penalty.kind``."""
    if penalty.kind == L1:
        return z_update_l1(w, v, penalty.lam, c)
    return z_update_lhalf(w, v, penalty, c)


def empirical_risk(w, data, loss=LOGISTIC):
    """Mean loss ``(1/n) sum_i O(y_i <w, x_i>)``."""
    w = np.asarray(w, dtype=float)
    if w.shape != (data.p,):
        raise ConfigError(f"w has shape {w.shape}, data has p={data.p}")
    return float(np.mean(loss.value(data.margins(w))))


def objective_value(w, data, loss=LOGISTIC, penalty=None):
    """Penalized empirical risk evaluated at ``w``.

    Accepts either a weight vector or an :class:`AdmmState`, in which case
    its ``w`` component is used.
    """
    if isinstance(w, AdmmState):
        w = w.w
    risk = empirical_risk(w, data, loss)
    if penalty is None:
        return risk
    return risk + penalty.value(w)
