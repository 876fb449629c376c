"""Optimizer family over flat float64 parameter vectors.

Implements SGD, SGD with momentum, Adam, and MIAdam (Adam with an
n-th-order multiple-summation of the first moment applied until a switch
step), plus the learning-rate schedules used by the simulations and
training runs.

All step functions are pure: they take the current parameter vector and
state and return new ones, leaving their inputs untouched.  Parameter
vectors are 1-D float64 numpy arrays; every update rule is elementwise,
so a batch of independent problems can be run as one concatenated
vector.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolationError, NonFiniteError

ParamVector = np.ndarray


def as_param_vector(values) -> ParamVector:
    """Coerce to a 1-D float64 array, validating shape."""
    arr = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if arr.ndim != 1 or arr.size < 1:
        raise ContractViolationError(
            f"parameter vector must be 1-D with dimension >= 1, got shape {arr.shape}"
        )
    return arr


def _check_step_inputs(theta: ParamVector, grad: ParamVector) -> None:
    if theta.shape != grad.shape:
        raise ContractViolationError(
            f"dimension mismatch: theta has shape {theta.shape}, grad has shape {grad.shape}"
        )
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError("non-finite entries in parameter vector")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite entries in gradient vector")


@dataclass(frozen=True)
class AdamHyperParams:
    """Adam hyperparameters.  Defaults are the image-classification set.

    ``eps_in_sqrt`` toggles the denominator between sqrt(v_hat) + eps
    (the default, matching the executable pseudocode) and
    sqrt(v_hat + eps) (the update-formula variant), for ablation.
    """

    alpha: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 5e-5
    eps_in_sqrt: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ContractViolationError("alpha must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractViolationError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ContractViolationError("epsilon must be > 0")
        if self.weight_decay < 0:
            raise ContractViolationError("weight_decay must be >= 0")
        if self.beta1 ** 2 / math.sqrt(self.beta2) >= 1:
            raise ContractViolationError("require beta1^2 / sqrt(beta2) < 1")


# Orders above this are accepted but flagged as untested in run metadata.
TESTED_MAX_ORDER = 3


@dataclass(frozen=True)
class MIAdamHyperParams:
    """MIAdam hyperparameters on top of an Adam base.

    ``switch_step`` is always counted in optimizer steps; callers working
    in epochs convert before constructing this.  ``pre_switch_lr_override``
    replaces the alpha**order_n pre-switch learning rate when set (useful
    on landscapes where alpha**n would make steps vanish for n >= 2).
    """

    adam: AdamHyperParams = field(default_factory=AdamHyperParams)
    order_n: int = 1
    kappa: float = 0.98
    switch_step: int = 20
    pre_switch_lr_override: float | None = None

    def __post_init__(self):
        if self.order_n < 1:
            raise ContractViolationError("order_n must be >= 1")
        if not (0 < self.kappa <= 1):
            raise ContractViolationError("kappa must lie in (0, 1]")
        if self.switch_step < 1:
            raise ContractViolationError("switch_step must be >= 1")
        if self.pre_switch_lr_override is not None and self.pre_switch_lr_override <= 0:
            raise ContractViolationError("pre_switch_lr_override must be > 0")

    @property
    def order_is_tested(self) -> bool:
        return self.order_n <= TESTED_MAX_ORDER

    @property
    def pre_switch_alpha(self) -> float:
        if self.pre_switch_lr_override is not None:
            return self.pre_switch_lr_override
        return self.adam.alpha ** self.order_n


@dataclass
class OptimizerState:
    """Per-run optimizer buffers: step counter, moments, and the m-bar stack."""

    step_t: int
    m: ParamVector
    v: ParamVector
    mbar_stack: list[ParamVector]

    @classmethod
    def zeros(cls, dim: int, order_n: int = 0) -> "OptimizerState":
        return cls(
            step_t=0,
            m=np.zeros(dim),
            v=np.zeros(dim),
            mbar_stack=[np.zeros(dim) for _ in range(order_n)],
        )

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            step_t=self.step_t,
            m=self.m.copy(),
            v=self.v.copy(),
            mbar_stack=[x.copy() for x in self.mbar_stack],
        )


def sgd_step(theta: ParamVector, grad: ParamVector, alpha: float) -> ParamVector:
    """Plain gradient descent: theta - alpha * grad."""
    if alpha <= 0:
        raise ContractViolationError("alpha must be > 0")
    _check_step_inputs(theta, grad)
    return theta - alpha * grad


def sgdm_step(
    theta: ParamVector,
    grad: ParamVector,
    state: OptimizerState,
    alpha: float,
    beta: float,
) -> tuple[ParamVector, OptimizerState]:
    """Heavy-ball momentum: m' = beta*m + g, theta' = theta - alpha*m'."""
    if alpha <= 0:
        raise ContractViolationError("alpha must be > 0")
    if not (0 <= beta < 1):
        raise ContractViolationError("beta must lie in [0, 1)")
    _check_step_inputs(theta, grad)
    if state.m.shape != theta.shape:
        raise ContractViolationError("state.m dimension does not match theta")
    m = beta * state.m + grad
    theta_new = theta - alpha * m
    new_state = OptimizerState(
        step_t=state.step_t + 1,
        m=m,
        v=state.v.copy(),
        mbar_stack=[x.copy() for x in state.mbar_stack],
    )
    return theta_new, new_state


def _updated_moments(g, state, beta1, beta2):
    m = beta1 * state.m + (1.0 - beta1) * g
    v = beta2 * state.v + (1.0 - beta2) * g * g
    return m, v


def _apply_update(theta, numerator, v, t, hp: AdamHyperParams, alpha_t, lr_multiplier):
    """theta - lr * alpha_t * (numerator / (1 - beta1^t)) / denom(v_hat).

    Shared by Adam and both MIAdam branches so that the post-switch MIAdam
    step is bitwise identical to a plain Adam step on the same state.
    """
    m_hat = numerator / (1.0 - hp.beta1 ** t)
    v_hat = v / (1.0 - hp.beta2 ** t)
    if hp.eps_in_sqrt:
        denom = np.sqrt(v_hat + hp.epsilon)
    else:
        denom = np.sqrt(v_hat) + hp.epsilon
    return theta - lr_multiplier * alpha_t * m_hat / denom


def adam_step(
    theta: ParamVector,
    grad: ParamVector,
    state: OptimizerState,
    hp: AdamHyperParams,
    lr_multiplier: float = 1.0,
) -> tuple[ParamVector, OptimizerState]:
    """One Adam step with coupled L2 weight decay and bias correction."""
    _check_step_inputs(theta, grad)
    if state.m.shape != theta.shape:
        raise ContractViolationError("state dimension does not match theta")
    t = state.step_t + 1
    g = grad + hp.weight_decay * theta if hp.weight_decay != 0.0 else grad
    m, v = _updated_moments(g, state, hp.beta1, hp.beta2)
    theta_new = _apply_update(theta, m, v, t, hp, hp.alpha, lr_multiplier)
    if not np.all(np.isfinite(theta_new)):
        raise NonFiniteError("Adam update produced non-finite parameters", step=t)
    new_state = OptimizerState(
        step_t=t, m=m, v=v, mbar_stack=[x.copy() for x in state.mbar_stack]
    )
    return theta_new, new_state


def miadam_step(
    theta: ParamVector,
    grad: ParamVector,
    state: OptimizerState,
    hp: MIAdamHyperParams,
    lr_multiplier: float = 1.0,
) -> tuple[ParamVector, OptimizerState]:
    """One MIAdam step.

    Before the switch step the first moment is pushed through an
    n-level stack, each level a kappa-decayed running sum of the one
    below (level 0 being the Adam first moment), the update uses the top
    of the stack, and the base learning rate is alpha**n (or its
    override).  From the switch step on, the step is exactly Adam; the
    stack is frozen, not cleared.
    """
    ahp = hp.adam
    _check_step_inputs(theta, grad)
    if state.m.shape != theta.shape:
        raise ContractViolationError("state dimension does not match theta")
    if len(state.mbar_stack) != hp.order_n:
        raise ContractViolationError(
            f"mbar_stack has {len(state.mbar_stack)} levels, expected order_n={hp.order_n}"
        )
    t = state.step_t + 1
    g = grad + ahp.weight_decay * theta if ahp.weight_decay != 0.0 else grad
    m, v = _updated_moments(g, state, ahp.beta1, ahp.beta2)

    if t < hp.switch_step:
        stack: list[ParamVector] = []
        below = m
        for j in range(hp.order_n):
            level = hp.kappa * state.mbar_stack[j] + below
            stack.append(level)
            below = level
        alpha_t = hp.pre_switch_alpha
        numerator = stack[-1]
    else:
        stack = [x.copy() for x in state.mbar_stack]
        alpha_t = ahp.alpha
        numerator = m

    theta_new = _apply_update(theta, numerator, v, t, ahp, alpha_t, lr_multiplier)
    if not np.all(np.isfinite(theta_new)):
        raise NonFiniteError("MIAdam update produced non-finite parameters", step=t)
    new_state = OptimizerState(step_t=t, m=m, v=v, mbar_stack=stack)
    return theta_new, new_state


# ---------------------------------------------------------------------------
# Learning-rate schedules


@dataclass(frozen=True)
class LrSchedule:
    """Multiplier schedule applied on top of the optimizer's base rate.

    ``kind`` is one of constant / cosine_annealing / milestones.  For the
    cosine kind, ``total_steps`` is the horizon and ``eta_min`` the
    multiplier floor reached at the horizon.  For milestones, the
    multiplier is gamma**(number of milestones <= t).
    """

    kind: str = "constant"
    total_steps: int = 0
    eta_min: float = 0.0
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1

    def __post_init__(self):
        if self.kind not in ("constant", "cosine_annealing", "milestones"):
            raise ContractViolationError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "cosine_annealing" and self.total_steps < 1:
            raise ContractViolationError("cosine schedule needs total_steps >= 1")
        if self.kind == "milestones":
            if list(self.milestones) != sorted(self.milestones):
                raise ContractViolationError("milestones must be sorted")
            if not (0 < self.gamma <= 1):
                raise ContractViolationError("gamma must lie in (0, 1]")


def schedule_multiplier(sched: LrSchedule, t: int) -> float:
    """Multiplier at step count ``t`` (completed steps; t=0 gives 1 for cosine)."""
    if sched.kind == "constant":
        return 1.0
    if sched.kind == "cosine_annealing":
        if not (0 <= t <= sched.total_steps):
            raise ContractViolationError(
                f"t={t} outside [0, {sched.total_steps}] for cosine schedule"
            )
        return sched.eta_min + 0.5 * (1.0 - sched.eta_min) * (
            1.0 + math.cos(math.pi * t / sched.total_steps)
        )
    return sched.gamma ** bisect_right(list(sched.milestones), t)


# ---------------------------------------------------------------------------
# Stateful wrappers and a small config union, for callers that drive an
# optimizer over many steps (landscapes, training loops, regret runs).


@dataclass(frozen=True)
class SgdParams:
    alpha: float = 1e-3


@dataclass(frozen=True)
class SgdmParams:
    alpha: float = 1e-3
    beta: float = 0.9


OptimizerParams = SgdParams | SgdmParams | AdamHyperParams | MIAdamHyperParams


class Sgd:
    def __init__(self, dim: int, params: SgdParams):
        self.params = params

    def step(self, theta, grad, lr_multiplier=1.0):
        return sgd_step(theta, grad, lr_multiplier * self.params.alpha)


class Sgdm:
    def __init__(self, dim: int, params: SgdmParams):
        self.params = params
        self.state = OptimizerState.zeros(dim)

    def step(self, theta, grad, lr_multiplier=1.0):
        theta, self.state = sgdm_step(
            theta, grad, self.state, lr_multiplier * self.params.alpha, self.params.beta
        )
        return theta


class Adam:
    def __init__(self, dim: int, params: AdamHyperParams):
        self.params = params
        self.state = OptimizerState.zeros(dim)

    def step(self, theta, grad, lr_multiplier=1.0):
        theta, self.state = adam_step(theta, grad, self.state, self.params, lr_multiplier)
        return theta


class MIAdam:
    def __init__(self, dim: int, params: MIAdamHyperParams):
        self.params = params
        self.state = OptimizerState.zeros(dim, order_n=params.order_n)

    def step(self, theta, grad, lr_multiplier=1.0):
        theta, self.state = miadam_step(theta, grad, self.state, self.params, lr_multiplier)
        return theta


def build_optimizer(params: OptimizerParams, dim: int):
    """Instantiate the stateful stepper matching a params object."""
    if isinstance(params, MIAdamHyperParams):
        return MIAdam(dim, params)
    if isinstance(params, AdamHyperParams):
        return Adam(dim, params)
    if isinstance(params, SgdmParams):
        return Sgdm(dim, params)
    if isinstance(params, SgdParams):
        return Sgd(dim, params)
    raise ContractViolationError(f"unknown optimizer params type {type(params)!r}")
