"""Stopping rules, residuals, run reports, and rate diagnostics.

Metrics are sampled once per epoch.  Every stopping predicate depends only
on quantities recomputable from (A, b, iterates), so reports stay auditable.
Report serialization: versioned JSON, plus flat CSV with one row per epoch
and a fixed column set (epoch, feas_inf, normal_eq, obj_x, obj_s,
signal_err, seconds).  The seconds column is wall-clock and is the only
non-reproducible field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .operators import BlockOperator
from .prox import subdiff_dist_inf_l1

__all__ = [
    "EpochRecord",
    "RunReport",
    "RunView",
    "StoppingRule",
    "BpKkt",
    "RpcaKkt",
    "NormalEq",
    "MaxEpochs",
    "AllOf",
    "bp_kkt",
    "rpca_kkt",
    "normal_eq_residual",
    "rate_probe",
    "RateDiagnostic",
    "CSV_COLUMNS",
]

JSON_SCHEMA_VERSION = 1
CSV_COLUMNS = ("epoch", "feas_inf", "normal_eq", "obj_x", "obj_s", "signal_err", "seconds")


# -- residuals and criteria (free functions) --------------------------------

def normal_eq_residual(A: BlockOperator, b, x) -> float:
    """||A^T (A x - b)||_2, the gradient norm of the least-squares residual.

    Vanishes at least-squares solutions even when A x = b is unsolvable.
    """
    r = A.apply(x) - np.asarray(b, dtype=float)
    return float(np.linalg.norm(A.adjoint_apply(r)))


def bp_kkt(x, y, A: BlockOperator, b, scale: float = 1.0, eps: float = 1e-6) -> bool:
    """Basis-pursuit optimality test.

    True when both the feasibility gap ||Ax - b||_inf and the sup-norm
    distance of -A^T y to the subdifferential of scale*||.||_1 at x fall
    below eps.
    """
    r = A.apply(x) - np.asarray(b, dtype=float)
    if float(np.abs(r).max()) > eps:
        return False
    v = -A.adjoint_apply(y)
    return subdiff_dist_inf_l1(x, v, scale) <= eps


def rpca_kkt(L_prev, L, S_prev, S, M, tau: float, eps: float = 1e-6) -> bool:
    """Low-rank + sparse split optimality test.

    Compares the two recoverable subgradients through the iterate change
    ||(L_prev - L) + (S - S_prev)||_F / (tau * ||M||_F) and checks the
    constraint residual ||L + S - M||_inf / ||M||_F.  Unsubscripted norms
    are Frobenius.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    M = np.asarray(M, dtype=float)
    m_norm = float(np.linalg.norm(M))
    if m_norm == 0.0:
        raise ValueError("M must be non-zero")
    drift = float(np.linalg.norm((L_prev - L) + (S - S_prev))) / (tau * m_norm)
    resid = float(np.abs(L + S - M).max()) / m_norm
    return drift <= eps and resid <= eps


# -- per-epoch records and reports ------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    feas_inf: float
    normal_eq: float
    obj_x: float
    obj_s: float | None
    signal_err: float | None
    seconds: float

    def as_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "feas_inf": self.feas_inf,
            "normal_eq": self.normal_eq,
            "obj_x": self.obj_x,
            "obj_s": self.obj_s,
            "signal_err": self.signal_err,
            "seconds": self.seconds,
        }


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class RunReport:
    """Everything one solver run produced, epoch by epoch."""

    method: str
    label: str
    seed: int
    sigma: float
    tau_min: float
    tau_max: float
    gamma: float | None
    block_count: int
    epochs: int = 0
    iterations: int = 0
    termination: str = "max_epochs"
    diverged_at: int | None = None
    svd_count: int = 0
    dual_audit_max: float | None = None
    history: list[EpochRecord] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.history[-1]

    @property
    def terminated(self) -> bool:
        return self.termination not in ("max_epochs", "diverged")

    def finalize(self) -> None:
        """Consistency checks at end of run (epoch accounting)."""
        if self.termination == "diverged":
            return
        if len(self.history) != self.epochs + 1:
            raise AssertionError(
                f"history length {len(self.history)} != epochs {self.epochs} + 1"
            )
        per_epoch = self.block_count if self.method != "pda" else 1
        if self.iterations != self.epochs * per_epoch:
            raise AssertionError(
                f"iterations {self.iterations} != epochs {self.epochs} x {per_epoch}"
            )

    def to_json_dict(self) -> dict:
        return {
            "schema_version": JSON_SCHEMA_VERSION,
            "method": self.method,
            "label": self.label,
            "seed": self.seed,
            "sigma": self.sigma,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "gamma": self.gamma,
            "block_count": self.block_count,
            "epochs": self.epochs,
            "iterations": self.iterations,
            "termination": self.termination,
            "diverged_at": self.diverged_at,
            "svd_count": self.svd_count,
            "dual_audit_max": self.dual_audit_max,
            "history": [r.as_dict() for r in self.history],
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=1, sort_keys=True))

    def csv_text(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for r in self.history:
            d = r.as_dict()
            lines.append(",".join(_csv_cell(d[c]) for c in CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.csv_text())


# -- stopping rules ----------------------------------------------------------

@dataclass
class RunView:
    """What a stopping predicate may look at after an epoch.

    ``resid_x`` is A x - b for the running iterate; ``resid_s`` is the same
    for the averaged iterate when the method maintains one.  ``y`` is the
    dual iterate (recovered from the primal state for the averaged form).
    """

    problem: object
    method: str
    epoch: int
    x: np.ndarray
    y: np.ndarray
    resid_x: np.ndarray
    s: np.ndarray | None = None
    resid_s: np.ndarray | None = None
    prev_x: np.ndarray | None = None
    history: list[EpochRecord] = field(default_factory=list)


class StoppingRule:
    reason = "stopped"

    def fires(self, view: RunView) -> bool:  # pragma: no cover - interface
        raise NotImplementedError


class BpKkt(StoppingRule):
    """Feasibility and l1-subdifferential distance both below eps."""

    reason = "bp_kkt"

    def __init__(self, eps: float = 1e-6, scale: float = 1.0):
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        self.eps = eps
        self.scale = scale

    def fires(self, view: RunView) -> bool:
        if float(np.abs(view.resid_x).max()) > self.eps:
            return False
        v = -view.problem.A.adjoint_apply(view.y)
        return subdiff_dist_inf_l1(view.x, v, self.scale) <= self.eps


class RpcaKkt(StoppingRule):
    """Iterate-change subgradient gap and constraint residual below eps.

    ``tau`` is the prox step actually applied to the low-rank block.
    """

    reason = "rpca_kkt"

    def __init__(self, eps: float = 1e-6, tau: float = 1.0):
        if not eps > 0:
            raise ValueError(f"eps must be positive, got {eps}")
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        self.eps = eps
        self.tau = tau

    def fires(self, view: RunView) -> bool:
        if view.prev_x is None:
            return False
        g = view.problem.g
        nuclear = g.nuclear_blocks()
        if len(nuclear) != 1 or g.p != 2:
            raise ValueError("RpcaKkt expects a two-block problem with one nuclear block")
        i_l = nuclear[0]
        i_s = 1 - i_l
        fn = g.blocks[i_l]
        sl_l = g.structure.block_slice(i_l)
        sl_s = g.structure.block_slice(i_s)
        shape = (fn.rows, fn.cols)
        L = view.x[sl_l].reshape(shape, order="F")
        Lp = view.prev_x[sl_l].reshape(shape, order="F")
        S = view.x[sl_s].reshape(shape, order="F")
        Sp = view.prev_x[sl_s].reshape(shape, order="F")
        M = np.asarray(view.problem.b, dtype=float).reshape(shape, order="F")
        return rpca_kkt(Lp, L, Sp, S, M, self.tau, self.eps)


class NormalEq(StoppingRule):
    """Normal-equation residual below a fraction of its initial value."""

    reason = "normal_eq"

    def __init__(self, eps_rel: float = 1e-4):
        if not eps_rel > 0:
            raise ValueError(f"eps_rel must be positive, got {eps_rel}")
        self.eps_rel = eps_rel

    def fires(self, view: RunView) -> bool:
        initial = view.history[0].normal_eq
        return view.history[-1].normal_eq <= self.eps_rel * initial


class MaxEpochs(StoppingRule):
    reason = "max_epochs"

    def __init__(self, epochs: int):
        self.epochs = int(epochs)

    def fires(self, view: RunView) -> bool:
        return view.epoch >= self.epochs


class AllOf(StoppingRule):
    """Conjunction: fires when every member fires at the same epoch."""

    def __init__(self, *rules: StoppingRule):
        if not rules:
            raise ValueError("AllOf needs at least one rule")
        self.rules = rules
        self.reason = "+".join(r.reason for r in rules)

    def fires(self, view: RunView) -> bool:
        return all(r.fires(view) for r in self.rules)


# -- rate diagnostics ---------------------------------------------------------

@dataclass
class RateDiagnostic:
    sup_k2_gap: float
    sup_k_gap: float
    tail_slope: float


def rate_probe(gaps, ks=None) -> RateDiagnostic:
    """Decay diagnostics for a gap history.

    Returns sup_k k^2*gap_k, sup_k k*gap_k, and the log-log slope of the
    last half of the positive tail (0.0 when fewer than two positive points
    remain).
    """
    gaps = np.asarray(gaps, dtype=float)
    if ks is None:
        ks = np.arange(1, gaps.size + 1, dtype=float)
    else:
        ks = np.asarray(ks, dtype=float)
    if ks.shape != gaps.shape:
        raise ValueError("gaps and ks must have equal length")
    if gaps.size == 0:
        return RateDiagnostic(0.0, 0.0, 0.0)
    sup_k2 = float((ks**2 * gaps).max())
    sup_k1 = float((ks * gaps).max())
    half = gaps.size // 2
    tail_k, tail_g = ks[half:], gaps[half:]
    pos = tail_g > 0
    if pos.sum() < 2:
        slope = 0.0
    else:
        slope = float(np.polyfit(np.log(tail_k[pos]), np.log(tail_g[pos]), 1)[0])
    return RateDiagnostic(sup_k2, sup_k1, slope)
