"""scikit-learn style front end to the solver."""

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted, validate_data

from .accountant import make_plan
from .core import LOGISTIC, ROW_NORM_TOL, Dataset, PenaltySpec
from .data import cap_row_norms
from .solver import SolverConfig, run_dpsc


class DPSparseLogisticRegression(ClassifierMixin, BaseEstimator):
    """Sparse logistic regression fitted by (optionally private) ADMM.

    Parameters
    ----------
    penalty : {"l1", "lhalf"}
    lam : float
        Penalty weight.
    epsilon : float or None
        Total privacy budget. ``None`` fits the non-private model.
    c, K, M, alpha :
        Solver schedule, see :class:`SolverConfig`.
    noise_mode : {"per_iteration", "once"}
        How noise is drawn when ``epsilon`` is set.
    mu, reweight_steps :
        Smoothing and inner rounds of the 1/2 quasi-norm step.
    init : {"auto", "random", "ones", "zeros"}
    cap_rows : bool
        Rescale rows with norm above 1 instead of rejecting them. Either
        way the privacy guarantee needs every row inside the unit ball.
    random_state : int

    Attributes
    ----------
    coef_ : ndarray of shape (1, n_features)
        Released classifier ``w``.
    sparse_coef_ : ndarray of shape (n_features,)
        Exactly sparse split variable ``z``.
    epsilon_ : float
        Budget spent (0 for the non-private fit).
    gamma_ : float or None
    privacy_plan_ : PrivacyPlan or None
    trace_ : list of TraceRow
    classes_ : ndarray of shape (2,)
        ``classes_[1]`` is encoded as +1.
    """

    def __init__(self, penalty="l1", lam=0.01, epsilon=None, c=2.5, K=100, M=10, alpha=0.5,
                 noise_mode="per_iteration", mu=1e-4, reweight_steps=5, init="auto",
                 cap_rows=False, random_state=0):
        self.penalty = penalty
        self.lam = lam
        self.epsilon = epsilon
        self.c = c
        self.K = K
        self.M = M
        self.alpha = alpha
        self.noise_mode = noise_mode
        self.mu = mu
        self.reweight_steps = reweight_steps
        self.init = init
        self.cap_rows = cap_rows
        self.random_state = random_state

    def _rows(self, X):
        if self.cap_rows:
            return cap_row_norms(X)[0]
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms > 1.0 + ROW_NORM_TOL):
            raise ValueError(
                f"{int(np.sum(norms > 1.0 + ROW_NORM_TOL))} rows have norm > 1; "
                "rescale the features or set cap_rows=True"
            )
        return X

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"need exactly two classes, got {len(self.classes_)}")
        y_pm = np.where(y == self.classes_[1], 1.0, -1.0)
        data = Dataset(self._rows(X), y_pm)

        private = self.epsilon is not None
        config = SolverConfig(
            c=self.c, K=self.K, M=self.M, alpha=self.alpha,
            noise_mode=self.noise_mode if private else "off",
            seed=self.random_state, init=self.init,
        )
        plan = make_plan(self.K, self.c, data.n, epsilon=self.epsilon) if private else None
        penalty = PenaltySpec(self.penalty, self.lam, self.mu, self.reweight_steps)
        result = run_dpsc(data, LOGISTIC, penalty, config, plan)

        self.coef_ = result.w_final[None, :].copy()
        self.intercept_ = np.zeros(1)
        self.sparse_coef_ = result.z_final.copy()
        self.epsilon_ = result.epsilon_spent
        self.gamma_ = result.gamma
        self.privacy_plan_ = plan
        self.trace_ = result.trace
        return self

    def decision_function(self, X):
        check_is_fitted(self)
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return X @ self.coef_[0]

    def predict(self, X):
        # a zero score counts as the positive class
        return self.classes_[(self.decision_function(X) >= 0).astype(int)]

    def predict_proba(self, X):
        pos = expit(self.decision_function(X))
        return np.column_stack([1.0 - pos, pos])
