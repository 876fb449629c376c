"""Closed-form mean escape times and online-convex regret runs.

The escape-time calculators evaluate the quasi-equilibrium /
low-temperature closed forms for the expected time an optimizer takes to
leave a sharp minimum through a saddle.  The two expressions coincide at
continuous time 1; for larger continuous times the multiple-integral
variant escapes strictly faster.

The regret runner probes convergence: on a drifting quadratic stream,
Adam's average regret decays while the unswitched multiple-integral
variant keeps accumulating, so its average regret stays bounded away
from zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, NonFiniteError
from .optim import OptimizerParams, build_optimizer


@dataclass(frozen=True)
class EscapeScenario:
    """Inputs to the escape-time closed forms.

    ``h_a_eigs`` / ``h_u_eigs`` are the full Hessian spectra at the sharp
    minimum and the saddle; ``escape_index`` marks the saddle's single
    negative eigenvalue (the escape direction), and the matching entry of
    ``h_a_eigs`` is the curvature of the minimum along that direction.
    """

    alpha: float
    beta1: float
    batch_size_b: int
    delta_L: float
    h_a_eigs: tuple[float, ...]
    h_u_eigs: tuple[float, ...]
    escape_index: int
    rho: float
    t_tilde: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ContractViolationError("alpha must be > 0")
        if not (0 <= self.beta1 < 1):
            raise ContractViolationError("beta1 must lie in [0, 1)")
        if self.batch_size_b < 1:
            raise ContractViolationError("batch size must be >= 1")
        if self.delta_L <= 0:
            raise ContractViolationError("delta_L must be > 0")
        if len(self.h_a_eigs) != len(self.h_u_eigs):
            raise ContractViolationError("spectra must have equal dimension")
        if not (0 <= self.escape_index < len(self.h_u_eigs)):
            raise ContractViolationError("escape_index out of range")
        if any(x <= 0 for x in self.h_a_eigs):
            raise ContractViolationError("all minimum eigenvalues must be > 0")
        negatives = [i for i, x in enumerate(self.h_u_eigs) if x < 0]
        if negatives != [self.escape_index]:
            raise ContractViolationError(
                "saddle spectrum must have exactly one negative entry, at escape_index"
            )
        if not (0 <= self.rho <= 1):
            raise ContractViolationError("rho must lie in [0, 1]")
        if self.t_tilde <= 0:
            raise ContractViolationError("t_tilde must be > 0")

    @property
    def h_ae(self) -> float:
        return self.h_a_eigs[self.escape_index]

    @property
    def h_ue_abs(self) -> float:
        return abs(self.h_u_eigs[self.escape_index])

    @property
    def det_ratio(self) -> float:
        """|det(H_a^{-1} H_u)| from the two spectra."""
        r = 1.0
        for ha, hu in zip(self.h_a_eigs, self.h_u_eigs):
            r *= abs(hu) / ha
        return r


def _escape_time(s: EscapeScenario, t_tilde: float) -> float:
    b = float(s.batch_size_b)
    hue = s.h_ue_abs
    prefactor = math.pi * (
        math.sqrt(1.0 + 4.0 * s.alpha * math.sqrt(b * hue) / (t_tilde * (1.0 - s.beta1)))
        + 1.0
    )
    geometry = s.det_ratio ** 0.25 / hue
    exponent = (2.0 * math.sqrt(b) * s.delta_L / (t_tilde * s.alpha)) * (
        s.rho / math.sqrt(s.h_ae) + (1.0 - s.rho) / math.sqrt(hue)
    )
    # Escape times legitimately explode for deep sharp wells; overflow is
    # reported as +inf rather than raised.
    try:
        exp_term = math.exp(exponent)
    except OverflowError:
        return math.inf
    return prefactor * geometry * exp_term


def escape_time_miadam1(s: EscapeScenario) -> float:
    """Mean escape time with the first-order multiple-integral term, at s.t_tilde."""
    return _escape_time(s, s.t_tilde)


def escape_time_adam(s: EscapeScenario) -> float:
    """Mean escape time of plain Adam (the t-tilde-free form)."""
    return _escape_time(s, 1.0)


def escape_report(s: EscapeScenario) -> dict:
    """Both escape times, their ratio, and overflow flags, for run reports."""
    phi_mi = escape_time_miadam1(s)
    phi_adam = escape_time_adam(s)
    ratio = phi_mi / phi_adam if math.isfinite(phi_mi) and math.isfinite(phi_adam) else None
    return {
        "phi_miadam1": phi_mi,
        "phi_adam": phi_adam,
        "ratio_miadam1_over_adam": ratio,
        "overflowed": not (math.isfinite(phi_mi) and math.isfinite(phi_adam)),
    }


# ---------------------------------------------------------------------------
# Regret tracking


@dataclass(frozen=True)
class DriftingQuadraticProblem:
    """Stream of convex losses f_t(theta) = 0.5 ||theta - c_t||^2.

    Targets c_t are drawn uniformly from [target_low, target_high]^dim by
    a seeded generator; the offline minimizer of the summed losses is the
    mean target.  Setting target_low == target_high gives a constant
    (zero-drift) problem.
    """

    dim: int = 4
    target_low: float = -1.0
    target_high: float = 1.0
    theta0: float = 1.0
    seed: int = 0

    def targets(self, horizon: int) -> np.ndarray:
        if self.target_low == self.target_high:
            return np.full((horizon, self.dim), self.target_low)
        rng = np.random.Generator(np.random.PCG64(self.seed))
        return rng.uniform(self.target_low, self.target_high, size=(horizon, self.dim))


@dataclass
class RegretSeries:
    horizon: int
    cumulative_regret: np.ndarray
    average_regret: np.ndarray
    optimizer_label: str


def run_regret_experiment(
    problem: DriftingQuadraticProblem,
    optimizer: OptimizerParams,
    horizon: int,
    lr_decay_h: float = 0.5,
    label: str = "",
) -> RegretSeries:
    """Track cumulative and average regret of one optimizer over the stream.

    The learning-rate multiplier decays as t**(-lr_decay_h); pass 0 to
    disable the decay.  MIAdam callers should disable the switch
    (switch_step beyond the horizon) to probe pre-switch behavior.
    """
    if horizon < 1:
        raise ContractViolationError("horizon must be >= 1")
    targets = problem.targets(horizon)
    theta_star = targets.mean(axis=0)
    theta = np.full(problem.dim, problem.theta0, dtype=np.float64)
    opt = build_optimizer(optimizer, problem.dim)
    cumulative = np.empty(horizon)
    running = 0.0
    for t in range(1, horizon + 1):
        c = targets[t - 1]
        diff_t = theta - c
        diff_star = theta_star - c
        running += 0.5 * float(diff_t @ diff_t) - 0.5 * float(diff_star @ diff_star)
        cumulative[t - 1] = running
        mult = t ** (-lr_decay_h) if lr_decay_h != 0.0 else 1.0
        try:
            theta = opt.step(theta, diff_t, lr_multiplier=mult)
        except NonFiniteError as err:
            raise NonFiniteError("regret run diverged to non-finite iterates", step=t) from err
    average = cumulative / np.arange(1, horizon + 1)
    return RegretSeries(
        horizon=horizon,
        cumulative_regret=cumulative,
        average_regret=average,
        optimizer_label=label,
    )
