"""Pure-epsilon privacy accounting for the perturbed ADMM solver.

One iteration whose w-step is perturbed with noise of parameter ``gamma``
costs

    eps_k = (2 * gamma * c1 + 2.8 * c2) / (n * c)

provided ``c >= 2 * c2 / n``, and ``K`` iterations compose linearly to
``K * eps_k``. For the logistic loss (``c1 = 1``, ``c2 = 1/4``) this is
``K * (8 * gamma + 2.8) / (4 * c * n)``, valid when additionally
``gamma <= c * n - 7/20``.
"""

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .core import LOGISTIC
from .exceptions import ConfigError, PrivacyBudgetError

CSV_COLUMNS = ("epsilon", "gamma", "eps_per_iter", "K", "c", "n", "c1", "c2", "valid", "reason")


def _check_positive(**kw):
    for name, val in kw.items():
        if not (np.isfinite(val) and val > 0):
            raise ConfigError(f"{name} must be finite and > 0, got {val!r}")


def per_iteration_epsilon(gamma, c, n, c1, c2):
    """Privacy cost of a single perturbed iteration."""
    return (2.0 * gamma * c1 + 2.8 * c2) / (n * c)


def epsilon_of(gamma, K, c, n, c1=LOGISTIC.c1, c2=LOGISTIC.c2):
    """Total budget spent by ``K`` iterations at noise parameter ``gamma``.

    Raises
    ------
    ConfigError
        If an argument is not positive.

    Notes
    -----
    The step-size precondition ``c >= 2 c2 / n`` is not enforced here; use
    :func:`make_plan` to obtain a validated plan.
    """
    _check_positive(gamma=gamma, K=K, c=c, n=n, c1=c1, c2=c2)
    return K * per_iteration_epsilon(gamma, c, n, c1, c2)


def min_epsilon(K, c, n, c2=LOGISTIC.c2):
    """Budget floor ``K * 2.8 * c2 / (c * n)``; no gamma > 0 reaches it."""
    return K * 2.8 * c2 / (c * n)


def gamma_for(epsilon, K, c, n, c1=LOGISTIC.c1, c2=LOGISTIC.c2):
    """Noise parameter that spends exactly ``epsilon`` over ``K`` iterations.

    Raises
    ------
    PrivacyBudgetError
        If ``epsilon`` does not exceed the floor :func:`min_epsilon`.
    """
    _check_positive(epsilon=epsilon, K=K, c=c, n=n, c1=c1, c2=c2)
    slack = epsilon * c * n / K - 2.8 * c2
    if not slack > 0:
        floor = min_epsilon(K, c, n, c2)
        raise PrivacyBudgetError(
            f"epsilon below K*2.8c2/(cn): epsilon={epsilon!r} but the minimal "
            f"achievable epsilon is {floor!r}",
            min_epsilon=floor,
        )
    return slack / (2.0 * c1)


def check_logistic_conditions(c, n, gamma):
    """Check ``c >= 1/(2n)`` and ``gamma <= c*n - 7/20`` for the logistic loss.

    Returns
    -------
    ok : bool
    reason : str
        Empty when ``ok``; otherwise names the violated inequality.
    """
    reasons = []
    if not c >= 1.0 / (2.0 * n):
        reasons.append("c below 1/(2n)")
    if not gamma <= c * n - 7.0 / 20.0:
        reasons.append("gamma exceeds cn - 7/20")
    return (not reasons), "; ".join(reasons)


@dataclass(frozen=True)
class PrivacyPlan:
    """A budget/noise pairing for one solver schedule.

    ``epsilon == K * per_iteration_epsilon`` always holds. ``valid`` is
    False (with ``reason``) when a precondition of the accounting fails;
    an invalid plan must not be used to run the solver.
    """

    epsilon: float
    gamma: float
    per_iteration_epsilon: float
    K: int
    c: float
    n: int
    c1: float
    c2: float
    valid: bool = True
    reason: str = ""

    def to_dict(self):
        return asdict(self)

    def require_valid(self):
        if not self.valid:
            raise PrivacyBudgetError(f"invalid privacy plan: {self.reason}")
        return self


def make_plan(K, c, n, *, epsilon=None, gamma=None, loss=LOGISTIC):
    """Build a :class:`PrivacyPlan` from either a budget or a noise parameter.

    Exactly one of ``epsilon`` and ``gamma`` must be given. An infeasible
    budget raises :class:`PrivacyBudgetError`; a violated precondition
    yields a plan with ``valid=False`` instead.
    """
    if (epsilon is None) == (gamma is None):
        raise ConfigError("give exactly one of epsilon and gamma")
    c1, c2 = loss.c1, loss.c2
    if gamma is None:
        gamma = gamma_for(epsilon, K, c, n, c1, c2)
    eps_k = per_iteration_epsilon(gamma, c, n, c1, c2)
    total = epsilon_of(gamma, K, c, n, c1, c2)

    reasons = []
    if not c >= 2.0 * c2 / n:
        reasons.append("c below 2*c2/n")
    if loss.kind == "logistic":
        # c >= 1/(2n) coincides with c >= 2*c2/n here, so only gamma adds a check
        if not gamma <= c * n - 7.0 / 20.0:
            reasons.append("gamma exceeds cn - 7/20")
    return PrivacyPlan(
        epsilon=total,
        gamma=gamma,
        per_iteration_epsilon=eps_k,
        K=int(K),
        c=float(c),
        n=int(n),
        c1=c1,
        c2=c2,
        valid=not reasons,
        reason="; ".join(reasons),
    )


def plan_rows(plans):
    """Rows of :data:`CSV_COLUMNS` for a sequence of plans."""
    for pl in plans:
        yield [
            repr(pl.epsilon), repr(pl.gamma), repr(pl.per_iteration_epsilon), str(pl.K),
            repr(pl.c), str(pl.n), repr(pl.c1), repr(pl.c2), str(pl.valid).lower(), pl.reason,
        ]


def plans_to_csv(plans):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(plan_rows(plans))
    return buf.getvalue()


def format_plan_table(plans):
    """Aligned plain-text table of plans, one line per plan."""
    header = ["epsilon", "gamma", "eps/iter", "K", "c", "n", "feasible", "reason"]
    rows = [
        [f"{p.epsilon:.6g}", f"{p.gamma:.6g}", f"{p.per_iteration_epsilon:.6g}",
         str(p.K), f"{p.c:.6g}", str(p.n), "yes" if p.valid else "no", p.reason]
        for p in plans
    ]
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    for r in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines)
