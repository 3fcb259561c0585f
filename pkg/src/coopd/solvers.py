"""Primal-dual iterations for min g(x) subject to the least-squares set of Ax = b.

Three schemes:

* ``pda_step`` — the full primal-dual iteration
      x+ = prox_{tau g}(x - tau A^T y)
      y+ = y + sigma (A (2 x+ - x) - b)

* ``coo_pda_step`` — the randomized block-coordinate variant.  One block i
  is drawn uniformly; with p blocks and per-block steps tau_i,
      x+_i = prox_{(tau_i/p) g_i}(x_i - (tau_i/p) A_i^T y),  t = x+_i - x_i
      y+   = y + u + sigma (p+1) A_i t
      u+   = u + sigma A_i t
  where u tracks sigma (A x - b) exactly.

* ``tseng_step`` — the fully primal equivalent form built from an
  extrapolated point z = theta x + (1-theta) s and an averaged sequence s,
  with schedule theta_k = 1/(k+1).  Driven by the same index stream it
  reproduces the coordinate iterates, and its averaged point is the one the
  O(1/k^2) feasibility-decay diagnostics apply to.

Convergence requires tau_i * sigma * lambda_i < 1 per block, with
lambda_i = ||A_i||^2; ``default_steps`` saturates that bound uniformly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import metrics as _metrics
from .operators import BlockOperator
from .prox import SeparableFunction
from .rng import SplitMix64

__all__ = [
    "StepSizes",
    "FullSteps",
    "default_steps",
    "manual_steps",
    "full_steps_from_exponent",
    "IndexStream",
    "CooPdState",
    "TsengState",
    "PdaState",
    "coo_pd_init",
    "tseng_init",
    "pda_init",
    "coo_pda_step",
    "tseng_step",
    "pda_step",
    "tseng_recovered_duals",
    "beta_coefficients",
    "run",
    "DivergenceError",
]

TAU_CAP = 1e12  # per-block step used when a block column is identically zero


class DivergenceError(RuntimeError):
    """A non-finite entry appeared in an iterate."""

    def __init__(self, iteration: int):
        super().__init__(f"non-finite iterate at iteration {iteration}")
        self.iteration = iteration


# -- step sizes ---------------------------------------------------------------

@dataclass(frozen=True)
class StepSizes:
    """Per-block primal steps tau and the shared dual step sigma.

    gamma is the sup of tau_i * sigma * lambda_i over blocks; validity
    (gamma < 1) is established by the factory that built the instance.
    """

    sigma: float
    tau: np.ndarray
    gamma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (0 < self.gamma < 1):
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        tau = np.asarray(self.tau, dtype=float)
        if (tau <= 0).any():
            raise ValueError("all tau_i must be positive")
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class FullSteps:
    """Scalar steps for the non-coordinate iteration (tau * sigma * ||A||^2 <= 1)."""

    sigma: float
    tau: float

    def __post_init__(self):
        if not (self.sigma > 0 and self.tau > 0):
            raise ValueError("sigma and tau must be positive")


def default_steps(A: BlockOperator, sigma: float, gamma: float = 0.99,
                  tau_cap: float = TAU_CAP) -> StepSizes:
    """tau_i = gamma / (sigma * lambda_i), capped for zero blocks.

    Saturates the per-block convergence condition uniformly, which is what
    makes the coordinate methods benefit from well-scaled blocks.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not (0 < gamma < 1):
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    lam = A.block_sq_norms()
    with np.errstate(divide="ignore"):
        tau = np.where(lam > 0, gamma / (sigma * lam), tau_cap)
    return StepSizes(sigma, tau, gamma)


def manual_steps(A: BlockOperator, sigma: float, tau) -> StepSizes:
    """Validate caller-chosen (sigma, tau) against the block norms."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (A.p,):
        raise ValueError(f"expected {A.p} tau entries, got shape {tau.shape}")
    lam = A.block_sq_norms()
    gamma = float((sigma * tau * lam).max())
    if gamma >= 1.0:
        raise ValueError(
            f"stepsize condition violated: max tau_i*sigma*lambda_i = {gamma:.6g} >= 1"
        )
    return StepSizes(sigma, tau, max(gamma, 1e-16))


def full_steps_from_exponent(A: BlockOperator, j: int) -> FullSteps:
    """The benchmark grid sigma = 1/(2^j ||A||), tau = 2^j / ||A||."""
    norm = A.norm()
    if norm == 0.0:
        raise ValueError("operator norm is zero")
    return FullSteps(sigma=1.0 / (2.0**j * norm), tau=2.0**j / norm)


# -- index stream -------------------------------------------------------------

class IndexStream:
    """Reproducible uniform block indices in [0, p)."""

    def __init__(self, seed: int, p: int):
        if p < 1:
            raise ValueError(f"p must be positive, got {p}")
        self.seed = int(seed)
        self.p = int(p)
        self._gen = SplitMix64(seed)
        self._limit = ((1 << 64) // self.p) * self.p

    def next(self) -> int:
        while True:
            u = self._gen.next_u64()
            if u < self._limit:
                return u % self.p


# -- iterate bundles ----------------------------------------------------------

@dataclass
class CooPdState:
    """Coordinate primal-dual iterates; u tracks sigma*(A x - b) exactly."""

    x: np.ndarray
    y: np.ndarray
    u: np.ndarray
    k: int = 0


@dataclass
class TsengState:
    """Fully primal iterates with the running average s and schedule theta.

    a_x and a_s cache A x and A s so single-block steps stay O(m); they are
    derived quantities and are audited against fresh matvecs in tests.
    """

    x: np.ndarray
    s: np.ndarray
    k: int = 0
    theta: float = 1.0
    a_x: np.ndarray | None = None
    a_s: np.ndarray | None = None


@dataclass
class PdaState:
    x: np.ndarray
    y: np.ndarray
    k: int = 0


def _start_vector(A: BlockOperator, x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(A.cols)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (A.cols,):
        raise ValueError(f"x0 must have length {A.cols}, got shape {x0.shape}")
    return x0.copy()


def coo_pd_init(A: BlockOperator, b, sigma: float, x0=None) -> CooPdState:
    """y0 = u0 = sigma * (A x0 - b)."""
    x = _start_vector(A, x0)
    r = A.apply(x) - np.asarray(b, dtype=float)
    y = sigma * r
    return CooPdState(x=x, y=y, u=y.copy(), k=0)


def tseng_init(A: BlockOperator, x0=None) -> TsengState:
    """s0 = x0, theta_0 = 1."""
    x = _start_vector(A, x0)
    ax = A.apply(x)
    return TsengState(x=x, s=x.copy(), k=0, theta=1.0, a_x=ax, a_s=ax.copy())


def pda_init(A: BlockOperator, b, sigma: float, x0=None) -> PdaState:
    """Same dual start as the coordinate form, for exact comparability."""
    x = _start_vector(A, x0)
    y = sigma * (A.apply(x) - np.asarray(b, dtype=float))
    return PdaState(x=x, y=y, k=0)


# -- single steps (mutate and return the state) --------------------------------

def coo_pda_step(state: CooPdState, A: BlockOperator, b, g: SeparableFunction,
                 steps: StepSizes, i: int) -> CooPdState:
    """One coordinate primal-dual update on block i."""
    sl = A.structure.block_slice(i)
    p = A.p
    step = steps.tau[i] / p
    grad = A.adjoint_apply_block(i, state.y)
    xi = state.x[sl]
    z = xi - step * grad
    # divergence surfaces here first (z inherits non-finite x or y entries);
    # the catalog proxes map finite input to finite output
    if not math.isfinite(float(z.sum())) and not np.isfinite(z).all():
        raise DivergenceError(state.k)
    xnew = g.prox_block(i, step, z)
    t = xnew - xi
    state.x[sl] = xnew
    state.y += state.u
    if t.any():
        at = A.apply_block(i, t)
        if not math.isfinite(float(at @ at)):
            raise DivergenceError(state.k)
        at *= steps.sigma
        state.u += at
        at *= p + 1
        state.y += at
    state.k += 1
    return state


def tseng_step(state: TsengState, A: BlockOperator, b, g: SeparableFunction,
               steps: StepSizes, i: int) -> TsengState:
    """One update of the fully primal form on block i.

    z = theta x + (1-theta) s; block i moves by a prox step against the
    partial least-squares gradient A_i^T (A z - b); s becomes z with block i
    extrapolated by p*theta times the move.
    """
    sl = A.structure.block_slice(i)
    p = A.p
    th = state.theta
    b = np.asarray(b, dtype=float)
    az = th * state.a_x + (1.0 - th) * state.a_s
    zi = th * state.x[sl] + (1.0 - th) * state.s[sl]
    grad = A.adjoint_apply_block(i, az - b)
    xi = state.x[sl]
    arg = xi - (steps.tau[i] * steps.sigma / (p * th)) * grad
    if not math.isfinite(float(arg.sum())) and not np.isfinite(arg).all():
        raise DivergenceError(state.k)
    xnew = g.prox_block(i, steps.tau[i] / p, arg)
    t = xnew - xi
    # s^{k+1} = z, then block i gets the extrapolated move
    state.s *= 1.0 - th
    state.s += th * state.x
    state.s[sl] = zi + (p * th) * t
    state.x[sl] = xnew
    if t.any():
        at = A.apply_block(i, t)
        if not math.isfinite(float(at @ at)):
            raise DivergenceError(state.k)
        state.a_s = az + (p * th) * at
        state.a_x = state.a_x + at
    else:
        state.a_s = az
    state.k += 1
    state.theta = 1.0 / (state.k + 1)
    return state


def pda_step(state: PdaState, A: BlockOperator, b, g: SeparableFunction,
             tau: float, sigma: float) -> PdaState:
    """One full primal-dual update (prox step, then extrapolated dual ascent)."""
    b = np.asarray(b, dtype=float)
    grad = A.adjoint_apply(state.y)
    xnew = g.prox(tau, state.x - tau * grad)
    if not np.isfinite(xnew).all():
        raise DivergenceError(state.k)
    ynew = state.y + sigma * (A.apply(2.0 * xnew - state.x) - b)
    if not np.isfinite(ynew).all():
        raise DivergenceError(state.k)
    state.x = xnew
    state.y = ynew
    state.k += 1
    return state


def tseng_recovered_duals(state: TsengState, b, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """The dual pair (y, u) the coordinate form would hold at this iterate:
    y = (sigma/theta) (A z - b), u = sigma (A x - b)."""
    b = np.asarray(b, dtype=float)
    az = state.theta * state.a_x + (1.0 - state.theta) * state.a_s
    y = (sigma / state.theta) * (az - b)
    u = sigma * (state.a_x - b)
    return y, u


def beta_coefficients(k: int, p: int) -> np.ndarray:
    """Weights expressing the averaged iterate s^k as sum_j beta_k^j x^j.

    Built by the forward recursion with theta_m = 1/(m+1): carrying weights
    shrink by (1-theta), the newest iterate enters with weight p*theta, and
    the previous head loses (p-1)*theta.  The weights always sum to 1; for
    p > 1 the weight on x^0 is (1-p)/k, so s^k is an affine (not convex)
    combination of the iterates.
    """
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    if p < 1:
        raise ValueError(f"p must be positive, got {p}")
    beta = np.zeros(k + 1)
    beta[0] = 1.0
    for m in range(k):
        th = 1.0 / (m + 1)
        head = beta[: m + 1] * (1.0 - th)
        head[m] -= (p - 1) * th
        beta[: m + 1] = head
        beta[m + 1] = p * th
    return beta


# -- run driver -----------------------------------------------------------------

_METHODS = ("pda", "coo-pda", "tseng-pda")


def run(problem, method: str, steps, stopping=None, seed: int = 0,
        max_epochs: int = 100, x0=None, audit_every: int = 50) -> "_metrics.RunReport":
    """Drive a solver and record per-epoch metrics.

    One epoch is p coordinate steps for the coordinate methods and one full
    iteration for ``pda``, so expected per-coordinate work per epoch is the
    same across methods.  Runs are deterministic given (problem, steps,
    seed).  Divergence is recorded in the report, not raised.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {_METHODS}")
    A, b, g = problem.A, problem.b, problem.g
    b = np.asarray(b, dtype=float)
    p = A.p
    if method == "pda":
        if not isinstance(steps, FullSteps):
            raise ValueError("pda runs take FullSteps")
        sigma, tau = steps.sigma, steps.tau
        gamma = None
        tau_min = tau_max = tau
    else:
        if not isinstance(steps, StepSizes):
            raise ValueError("coordinate runs take StepSizes")
        if steps.tau.shape != (p,):
            raise ValueError(f"steps carry {steps.tau.shape[0]} blocks, operator has {p}")
        sigma = steps.sigma
        gamma = steps.gamma
        tau_min = float(steps.tau.min())
        tau_max = float(steps.tau.max())

    report = _metrics.RunReport(
        method=method,
        label=getattr(problem, "label", ""),
        seed=seed,
        sigma=sigma,
        tau_min=tau_min,
        tau_max=tau_max,
        gamma=gamma,
        block_count=p,
    )

    truth_x = None
    truth_l = None
    truth = getattr(problem, "truth", None)
    if truth is not None:
        truth_x = getattr(truth, "x", None)
        truth_l = getattr(truth, "L", None)
    nuclear = set(g.nuclear_blocks())
    l_slice = l_shape = None
    if truth_l is not None and nuclear:
        i_l = next(iter(nuclear))
        fn = g.blocks[i_l]
        l_slice = g.structure.block_slice(i_l)
        l_shape = (fn.rows, fn.cols)
        truth_l_norm = float(np.linalg.norm(truth_l))

    if method == "coo-pda":
        state = coo_pd_init(A, b, sigma, x0)
    elif method == "tseng-pda":
        state = tseng_init(A, x0)
    else:
        state = pda_init(A, b, sigma, x0)
    stream = IndexStream(seed, p) if method != "pda" else None

    start = time.perf_counter()

    def signal_error(x: np.ndarray) -> float | None:
        if l_slice is not None:
            L = x[l_slice].reshape(l_shape, order="F")
            return float(np.linalg.norm(L - truth_l)) / truth_l_norm
        if truth_x is not None:
            denom = float(np.linalg.norm(truth_x))
            if denom > 0:
                return float(np.linalg.norm(x - truth_x)) / denom
        return None

    def audit_dual(x: np.ndarray, u: np.ndarray) -> None:
        dev = float(np.abs(u - sigma * (A.apply(x) - b)).max())
        if report.dual_audit_max is None or dev > report.dual_audit_max:
            report.dual_audit_max = dev

    def record(epoch: int) -> _metrics.RunView:
        if method == "coo-pda":
            resid_x = state.u / sigma
            x, y, s, resid_s = state.x, state.y, None, None
            point, point_resid = x, resid_x
            if audit_every and epoch % audit_every == 0:
                audit_dual(state.x, state.u)
        elif method == "tseng-pda":
            x, s = state.x, state.s
            resid_x = state.a_x - b
            resid_s = state.a_s - b
            y, _ = tseng_recovered_duals(state, b, sigma)
            point, point_resid = s, resid_s
        else:
            x, y, s, resid_s = state.x, state.y, None, None
            resid_x = A.apply(x) - b
            point, point_resid = x, resid_x
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise DivergenceError(getattr(state, "k", epoch))
        rec = _metrics.EpochRecord(
            epoch=epoch,
            feas_inf=float(np.abs(point_resid).max()),
            normal_eq=float(np.linalg.norm(A.adjoint_apply(point_resid))),
            obj_x=g.value(x),
            obj_s=g.value(s) if s is not None else None,
            signal_err=signal_error(x),
            seconds=time.perf_counter() - start,
        )
        report.history.append(rec)
        return _metrics.RunView(
            problem=problem, method=method, epoch=epoch, x=x, y=y,
            resid_x=resid_x, s=s, resid_s=resid_s, prev_x=prev_x,
            history=report.history,
        )

    def advance_epoch() -> None:
        if method == "pda":
            pda_step(state, A, b, g, tau, sigma)
            if nuclear:
                report.svd_count += len(nuclear)
            return
        for _ in range(p):
            i = stream.next()
            if method == "coo-pda":
                coo_pda_step(state, A, b, g, steps, i)
            else:
                tseng_step(state, A, b, g, steps, i)
            if i in nuclear:
                report.svd_count += 1

    prev_x = None
    try:
        view = record(0)
        if stopping is not None and max_epochs > 0 and stopping.fires(view):
            report.termination = stopping.reason
        else:
            for epoch in range(1, max_epochs + 1):
                prev_x = state.x.copy()
                advance_epoch()
                view = record(epoch)
                report.epochs = epoch
                report.iterations = state.k if method != "pda" else epoch
                if stopping is not None and stopping.fires(view):
                    report.termination = stopping.reason
                    break
            else:
                report.termination = "max_epochs"
        if method == "coo-pda":
            audit_dual(state.x, state.u)
    except DivergenceError as exc:
        report.termination = "diverged"
        report.diverged_at = exc.iteration
        report.iterations = getattr(state, "k", 0)
    report.finalize()
    return report
