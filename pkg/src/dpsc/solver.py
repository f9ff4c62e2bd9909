"""Differentially private sparse classification by perturbed ADMM.

Each outer iteration performs

1. a Z-step (soft-thresholding or reweighted soft-thresholding), which
   never reads the data;
2. a w-step: ``M`` gradient steps on the perturbed objective

       (1/n) sum_i O(y_i <w, x_i>) + (c/2) ||z - w + v/c||^2 + c <b, w>

   which is the only place the data is touched;
3. a dual step ``v <- v + c (z - w)``.

Fresh noise ``b`` is drawn every iteration by default (``noise_mode =
"per_iteration"``); ``"once"`` draws a single vector before the loop and
``"off"`` gives the non-private baselines.
"""

import csv
import io
from dataclasses import dataclass, field, fields

import numpy as np

from .core import LHALF, LOGISTIC, AdmmState, Dataset, PenaltySpec, objective_value, z_update
from .exceptions import ConfigError, PrivacyBudgetError, SolverDivergenceError
from .noise import NoiseSpec, sample_noise, zero_noise

NOISE_MODES = ("per_iteration", "once", "off")
INIT_MODES = ("auto", "random", "ones", "zeros")
TRACE_COLUMNS = (
    "iteration", "objective", "primal_residual", "epsilon_spent_so_far",
    "objective_at_z", "dual_change",
)


@dataclass(frozen=True)
class SolverConfig:
    """Schedule and step sizes for one ADMM solve.

    Parameters
    ----------
    c : float
        Augmented-Lagrangian penalty coefficient.
    K : int
        Outer iterations.
    M : int
        Gradient steps per w-step.
    alpha : float
        Gradient step size of the w-step.
    noise_mode : {"per_iteration", "once", "off"}
    seed : int
        Seed of the run's random stream (initial point and noise).
    init : {"auto", "random", "ones", "zeros"}
        Initial ``z`` and ``w``. ``"auto"`` is uniform on [-0.5, 0.5]^p
        for the L1 penalty and all ones for the 1/2 quasi-norm.
    inner_tol : float or None
        Optional early stop of the w-step once the gradient norm falls
        below this value. ``None`` always takes ``M`` steps.
    divergence_bound : float
        Abort when any iterate coordinate exceeds this magnitude.
    """

    c: float = 2.5
    K: int = 100
    M: int = 10
    alpha: float = 0.5
    noise_mode: str = "per_iteration"
    seed: int = 0
    init: str = "auto"
    inner_tol: float = None
    divergence_bound: float = 1e8

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise ConfigError(f"c must be > 0, got {self.c!r}")
        for name in ("K", "M"):
            val = getattr(self, name)
            if int(val) != val or val < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {val!r}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ConfigError(f"alpha must be > 0, got {self.alpha!r}")
        if self.noise_mode not in NOISE_MODES:
            raise ConfigError(f"noise_mode must be one of {NOISE_MODES}, got {self.noise_mode!r}")
        if self.init not in INIT_MODES:
            raise ConfigError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.inner_tol is not None and not self.inner_tol > 0:
            raise ConfigError("inner_tol must be > 0 or None")
        if int(self.seed) != self.seed or self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def private(self):
        return self.noise_mode != "off"


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    objective: float
    primal_residual: float
    epsilon_spent_so_far: float
    objective_at_z: float
    dual_change: float


@dataclass
class SolveResult:
    """Output of :func:`run_dpsc`.

    ``w_final`` is the released classifier; ``z_final`` is the exactly
    sparse copy used for support recovery.
    """

    w_final: np.ndarray
    z_final: np.ndarray
    v_final: np.ndarray
    trace: list = field(default_factory=list)
    epsilon_spent: float = 0.0
    gamma: float = None

    def trace_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in self.trace:
            writer.writerow([row.iteration] + [repr(float(getattr(row, c))) for c in TRACE_COLUMNS[1:]])
        return buf.getvalue()


def _signed_features(data):
    return data.labels[:, None] * data.features


def _loss_gradient(w, yX, loss):
    return yX.T @ loss.derivative(yX @ w) / yX.shape[0]


def private_w_objective(w, z, v, b, data, c, loss=LOGISTIC):
    """Perturbed w-subproblem value at ``w`` for fixed ``z``, ``v`` and noise ``b``."""
    w = np.asarray(w, dtype=float)
    risk = float(np.mean(loss.value(data.margins(w))))
    r = z - w + v / c
    return risk + 0.5 * c * float(r @ r) + c * float(np.asarray(b) @ w)


def private_w_gradient(w, z, v, b, data, c, loss=LOGISTIC):
    """Gradient of :func:`private_w_objective` with respect to ``w``."""
    w = np.asarray(w, dtype=float)
    return _loss_gradient(w, _signed_features(data), loss) - c * (z - w + v / c) + c * np.asarray(b)


def _gd(w, z, v, b, yX, c, alpha, M, loss, tol, bound, k):
    for m in range(1, M + 1):
        grad = _loss_gradient(w, yX, loss) - c * (z - w + v / c) + c * b
        if tol is not None and np.sqrt(grad @ grad) < tol:
            break
        w = w - alpha * grad
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > bound:
            raise SolverDivergenceError(
                f"w-step diverged at outer iteration {k}, gradient step {m}; "
                f"reduce the step size alpha={alpha!r}",
                iteration=k, inner_step=m,
            )
    return w


def w_update_gd(state, data, config, b, loss=LOGISTIC):
    """Run the perturbed w-step from ``state.w``.

    ``state.z`` must already hold the new Z iterate and ``state.v`` the
    current dual. Returns the new ``w`` after ``config.M`` gradient steps
    (fewer if ``config.inner_tol`` triggers).

    Raises
    ------
    SolverDivergenceError
        If an iterate becomes non-finite or exceeds ``config.divergence_bound``.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != state.w.shape or state.p != data.p:
        raise ConfigError("noise, state and data dimensions disagree")
    return _gd(state.w.copy(), state.z, state.v, b, _signed_features(data), config.c,
               config.alpha, int(config.M), loss, config.inner_tol,
               config.divergence_bound, state.k)


def dual_update(z_next, w_next, v, c):
    """Scaled multiplier step ``v + c (z_next - w_next)``."""
    return np.asarray(v, dtype=float) + c * (np.asarray(z_next, dtype=float) - np.asarray(w_next, dtype=float))


def implied_noise(w, z, v_prev, data, c, loss=LOGISTIC):
    """Noise vector for which ``w`` is the exact w-step minimizer.

    Setting the w-step gradient to zero gives

        b = -(1/(c n)) sum_i y_i O'(y_i <w, x_i>) x_i + (z - w + v_prev / c).

    Given the previous iterates the map ``b -> w`` is a bijection, which is
    what the per-iteration privacy argument rests on.
    """
    w = np.asarray(w, dtype=float)
    yX = _signed_features(data)
    return -_loss_gradient(w, yX, loss) / c + (np.asarray(z) - w + np.asarray(v_prev) / c)


def sensitivity_witness(data, swapped_index, replacement, w, state, c, loss=LOGISTIC):
    """``||b' - b||`` between a dataset and a neighbour at the same ``w``.

    Parameters
    ----------
    data : Dataset
    swapped_index : int
        Row of ``data`` to replace.
    replacement : tuple of (ndarray, float)
        New feature vector (norm <= 1) and label.
    w : ndarray
    state : AdmmState
        Supplies ``z`` and the previous dual ``v``.
    c : float

    Returns
    -------
    float
        Never exceeds ``2 * loss.c1 / (c * n)``.
    """
    x_new, y_new = replacement
    x_new = np.asarray(x_new, dtype=float)
    if x_new.shape != (data.p,):
        raise ConfigError("replacement feature has the wrong length")
    if np.linalg.norm(x_new) > 1.0 + 1e-12:
        raise ConfigError("replacement feature has norm > 1")
    if y_new not in (-1, 1):
        raise ConfigError("replacement label must be -1 or +1")
    X = np.array(data.features)
    y = np.array(data.labels)
    X[swapped_index] = x_new
    y[swapped_index] = y_new
    neighbour = Dataset(X, y)
    b = implied_noise(w, state.z, state.v, data, c, loss)
    b2 = implied_noise(w, state.z, state.v, neighbour, c, loss)
    return float(np.linalg.norm(b2 - b))


def _check_plan(privacy, config, data, loss):
    if privacy is None:
        raise PrivacyBudgetError("a privacy plan is required unless noise_mode is 'off'")
    privacy.require_valid()
    mismatches = []
    if privacy.K != config.K:
        mismatches.append(f"K: plan {privacy.K} vs solver {config.K}")
    if privacy.c != config.c:
        mismatches.append(f"c: plan {privacy.c} vs solver {config.c}")
    if privacy.n != data.n:
        mismatches.append(f"n: plan {privacy.n} vs data {data.n}")
    if (privacy.c1, privacy.c2) != (loss.c1, loss.c2):
        mismatches.append("loss bounds differ from the plan's c1, c2")
    if mismatches:
        raise PrivacyBudgetError("privacy plan does not match the run: " + "; ".join(mismatches))


def _initial_state(p, config, penalty, rng):
    init = config.init
    if init == "auto":
        init = "ones" if penalty.kind == LHALF else "random"
    if init == "random":
        z = rng.uniform(-0.5, 0.5, size=p)
        w = rng.uniform(-0.5, 0.5, size=p)
    elif init == "ones":
        z = np.ones(p)
        w = np.ones(p)
    else:
        z = np.zeros(p)
        w = np.zeros(p)
    return AdmmState(z, w, np.zeros(p), 0)


def run_dpsc(data, loss, penalty, config, privacy=None):
    """Run the perturbed ADMM solver for ``config.K`` iterations.

    Parameters
    ----------
    data : Dataset
    loss : LossSpec
    penalty : PenaltySpec
    config : SolverConfig
    privacy : PrivacyPlan or None
        Required (and must be valid and match ``K``, ``c`` and ``n``)
        unless ``config.noise_mode == "off"``. Checked before the data is
        read.

    Returns
    -------
    SolveResult

    Raises
    ------
    PrivacyBudgetError
        Missing, invalid or mismatched privacy plan.
    SolverDivergenceError
        The w-step diverged; the error carries the iteration index.
    """
    if config.private:
        _check_plan(privacy, config, data, loss)
        gamma = privacy.gamma
        eps_step = privacy.per_iteration_epsilon
    else:
        gamma = None
        eps_step = 0.0

    p = data.p
    init_seq, noise_seq = np.random.SeedSequence(int(config.seed)).spawn(2)
    state = _initial_state(p, config, penalty, np.random.default_rng(init_seq))
    noise_rng = np.random.default_rng(noise_seq)
    spec = NoiseSpec(gamma, p) if config.private else None

    b = zero_noise(p)
    if config.noise_mode == "once":
        b = sample_noise(spec, noise_rng)

    yX = _signed_features(data)
    c = config.c
    trace = []
    for k in range(int(config.K)):
        state.k = k
        z_next = z_update(state.w, state.v, penalty, c)
        if config.noise_mode == "per_iteration":
            b = sample_noise(spec, noise_rng)
        w_next = _gd(state.w, z_next, state.v, b, yX, c, config.alpha, int(config.M), loss,
                     config.inner_tol, config.divergence_bound, k)
        v_next = dual_update(z_next, w_next, state.v, c)

        dual_change = float(np.linalg.norm(v_next - state.v))
        state.z, state.w, state.v = z_next, w_next, v_next
        trace.append(TraceRow(
            iteration=k + 1,
            objective=objective_value(w_next, data, loss, penalty),
            primal_residual=float(np.linalg.norm(z_next - w_next)),
            epsilon_spent_so_far=(k + 1) * eps_step,
            objective_at_z=objective_value(z_next, data, loss, penalty),
            dual_change=dual_change,
        ))
    state.k = int(config.K)

    return SolveResult(
        w_final=state.w,
        z_final=state.z,
        v_final=state.v,
        trace=trace,
        epsilon_spent=privacy.epsilon if config.private else 0.0,
        gamma=gamma,
    )


def run_dpll(data, config, privacy, lam):
    """Private L1-penalized logistic regression."""
    return run_dpsc(data, LOGISTIC, PenaltySpec.l1(lam), config, privacy)


def run_dplh(data, config, privacy, penalty):
    """Private logistic regression with the 1/2 quasi-norm penalty."""
    if penalty.kind != LHALF:
        raise ConfigError("run_dplh needs an lhalf penalty")
    return run_dpsc(data, LOGISTIC, penalty, config, privacy)
