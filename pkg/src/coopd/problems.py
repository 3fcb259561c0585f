"""Seeded instance generators for every benchmark family.

Each generator packages an operator, right-hand side, separable objective,
and whatever ground truth the construction knows (planted signal, noise
vector, planted low-rank/sparse split, or an exactly solved optimum).
Generators are pure in (parameters, seed): identical inputs give
bit-identical instances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .operators import (
    BlockStructure,
    BlockOperator,
    DenseOperator,
    IdentityOperator,
    LowRankOperator,
    SampledDctOperator,
    SparseColumnOperator,
    hcat,
    save_dense,
    save_sparse,
    uniform_widths,
)
from .prox import L1, BlockFunction, LinearNonneg, Nuclear, SeparableFunction, Zero

__all__ = [
    "GroundTruth",
    "ProblemInstance",
    "gen_bp_gaussian",
    "gen_bp_dct",
    "gen_bp_noisy",
    "gen_rpca",
    "gen_lp",
    "gen_consensus",
    "gen_composite",
    "lp_vertex_oracle",
    "export_instance",
]


@dataclass
class GroundTruth:
    """Whatever the generator can certify about its instance."""

    x: np.ndarray | None = None               # planted signal
    noise: np.ndarray | None = None           # b - A x for noisy builds
    signal: np.ndarray | None = None          # non-sparse signal w when x is a code
    L: np.ndarray | None = None               # planted low-rank part
    S: np.ndarray | None = None               # planted sparse part
    optimum: np.ndarray | None = None         # exactly solved minimizer
    optimum_value: float | None = None
    multiplier: np.ndarray | None = None      # dual certificate at the optimum
    consensus_interval: tuple[float, float] | None = None
    median: float | None = None


@dataclass
class ProblemInstance:
    A: BlockOperator
    b: np.ndarray
    g: SeparableFunction
    truth: GroundTruth | None
    label: str

    def objective(self, x) -> float:
        return self.g.value(x)


def _uniform_l1(structure: BlockStructure, scale: float = 1.0) -> SeparableFunction:
    return SeparableFunction([L1(scale) for _ in range(structure.p)], structure)


def _round_half_away(z: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves away from zero."""
    return np.copysign(np.floor(np.abs(z) + 0.5), z)


def gen_bp_gaussian(m: int, n: int, density: float, amplitude_range=(-10.0, 10.0),
                    seed: int = 0, width: int = 1) -> ProblemInstance:
    """Consistent basis pursuit with a Gaussian sensing matrix.

    A has i.i.d. standard normal entries; the planted signal has
    ceil(density * n) nonzeros drawn uniformly from amplitude_range;
    b = A x_true, so the system is consistent by construction.
    """
    if not 0 < density < 1:
        raise ValueError(f"density must lie in (0, 1), got {density}")
    if not m < n:
        raise ValueError(f"underdetermined system required (m < n), got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((m, n))
    k = int(np.ceil(density * n))
    support = rng.choice(n, size=k, replace=False)
    lo, hi = amplitude_range
    x_true = np.zeros(n)
    x_true[support] = rng.uniform(lo, hi, size=k)
    b = matrix @ x_true
    A = DenseOperator(matrix, widths=uniform_widths(n, width))
    g = _uniform_l1(A.structure)
    label = f"bp_gaussian(m={m},n={n},density={density},width={width},seed={seed})"
    return ProblemInstance(A, b, g, GroundTruth(x=x_true), label)


def gen_bp_dct(m: int, n: int, k_nonzero: int, head: int, seed: int = 0,
               width: int = 1) -> ProblemInstance:
    """Basis pursuit with randomly sampled rows of the orthonormal DCT-II.

    The planted signal has k_nonzero standard-normal entries among the first
    ``head`` coordinates.
    """
    if not (1 <= k_nonzero <= head <= n):
        raise ValueError(
            f"need 1 <= k_nonzero <= head <= n, got k={k_nonzero}, head={head}, n={n}"
        )
    if not m <= n:
        raise ValueError(f"cannot sample {m} distinct rows from {n}")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    support = rng.choice(head, size=k_nonzero, replace=False)
    x_true = np.zeros(n)
    x_true[support] = rng.standard_normal(k_nonzero)
    A = SampledDctOperator(rows, n, widths=uniform_widths(n, width))
    b = A.apply(x_true)
    g = _uniform_l1(A.structure)
    label = f"bp_dct(m={m},n={n},k={k_nonzero},head={head},width={width},seed={seed})"
    return ProblemInstance(A, b, g, GroundTruth(x=x_true), label)


def gen_bp_noisy(m: int, n: int, k_nonzero: int, matrix: str = "gaussian",
                 noise: str = "gaussian", noise_scale: float = 1.0,
                 dictionary: str | None = None, seed: int = 0,
                 width: int = 1) -> ProblemInstance:
    """Basis pursuit with corrupted measurements (possibly inconsistent).

    matrix: "gaussian" for dense i.i.d. normal, "lowrank" for a product of
    (m x m/2) and (m/2 x n) Gaussian factors, which caps rank(A) at m/2 and
    makes the noisy system inconsistent with high probability.
    noise: "gaussian" adds noise_scale * N(0, I); "rounding" rounds every
    coordinate of A x_true to the nearest integer (halves away from zero).
    dictionary="dct": the planted code is sparse in a DCT dictionary and the
    dense matrix becomes M @ Phi for Gaussian measurements M.
    """
    if matrix not in ("gaussian", "lowrank"):
        raise ValueError(f"unknown matrix kind {matrix!r}")
    if noise not in ("gaussian", "rounding"):
        raise ValueError(f"unknown noise kind {noise!r}")
    if dictionary not in (None, "dct"):
        raise ValueError(f"unknown dictionary {dictionary!r}")
    if dictionary == "dct" and matrix != "gaussian":
        raise ValueError("the dictionary scenario uses Gaussian measurements")
    if not (1 <= k_nonzero <= n):
        raise ValueError(f"k_nonzero must lie in [1, {n}], got {k_nonzero}")
    rng = np.random.default_rng(seed)
    widths = uniform_widths(n, width)

    x_true = np.zeros(n)
    support = rng.choice(n, size=k_nonzero, replace=False)
    signal = None
    if dictionary == "dct":
        x_true[support] = rng.standard_normal(k_nonzero)
        meas = rng.standard_normal((m, n))
        phi = SampledDctOperator(np.arange(n), n)
        # build M @ Phi without holding the full n-by-n transform
        prod = np.empty((m, n))
        chunk = 512
        for j0 in range(0, n, chunk):
            j1 = min(j0 + chunk, n)
            prod[:, j0:j1] = meas @ phi.columns(j0, j1)
        A: BlockOperator = DenseOperator(prod, widths=widths)
        signal = phi.apply(x_true)
        clean = meas @ signal
    elif matrix == "gaussian":
        x_true[support] = rng.uniform(-10.0, 10.0, size=k_nonzero)
        A = DenseOperator(rng.standard_normal((m, n)), widths=widths)
        clean = A.apply(x_true)
    else:
        if m % 2 != 0:
            raise ValueError(f"lowrank matrices need even m (inner dimension m/2), got {m}")
        x_true[support] = rng.uniform(-10.0, 10.0, size=k_nonzero)
        left = rng.standard_normal((m, m // 2))
        right = rng.standard_normal((m // 2, n))
        A = LowRankOperator(left, right, widths=widths)
        clean = A.apply(x_true)

    if noise == "gaussian":
        eps = noise_scale * rng.standard_normal(m)
        b = clean + eps
    else:
        b = _round_half_away(clean)
        eps = b - clean
    g = _uniform_l1(A.structure)
    label = (
        f"bp_noisy(m={m},n={n},k={k_nonzero},matrix={matrix},noise={noise},"
        f"dict={dictionary},width={width},seed={seed})"
    )
    return ProblemInstance(A, b, g, GroundTruth(x=x_true, noise=eps, signal=signal), label)


def gen_rpca(n1: int, n2: int, r: int, density: float, magnitude: float = 500.0,
             seed: int = 0, svd_backend: str = "exact") -> ProblemInstance:
    """Low-rank + sparse recovery: min ||L||_* + lambda ||S||_1 s.t. L + S = M.

    Two blocks over x = (vec L, vec S) with A = [I | I] on column-major
    vectorized matrices and lambda = 1/sqrt(n1).  The planted L is a product
    of Gaussian factors of rank r; the planted S has round(density*n1*n2)
    entries uniform in [-magnitude, magnitude].
    """
    if not 1 <= r <= min(n1, n2):
        raise ValueError(f"rank must lie in [1, min(n1, n2)], got {r}")
    if not 0 <= density < 1:
        raise ValueError(f"density must lie in [0, 1), got {density}")
    rng = np.random.default_rng(seed)
    L_true = rng.standard_normal((n1, r)) @ rng.standard_normal((r, n2))
    S_true = np.zeros((n1, n2))
    k = int(round(density * n1 * n2))
    if k:
        flat = rng.choice(n1 * n2, size=k, replace=False)
        S_true.flat[flat] = rng.uniform(-magnitude, magnitude, size=k)
    M = L_true + S_true
    m = n1 * n2
    A = hcat(IdentityOperator(m), sign=1)
    lam = 1.0 / np.sqrt(n1)
    g = SeparableFunction(
        [Nuclear(1.0, n1, n2, backend=svd_backend, seed=seed), L1(lam)], A.structure
    )
    b = M.reshape(-1, order="F")
    label = (
        f"rpca(n1={n1},n2={n2},r={r},density={density},magnitude={magnitude},"
        f"svd={svd_backend},seed={seed},vec=column-major)"
    )
    return ProblemInstance(A, b, g, GroundTruth(L=L_true, S=S_true), label)


def lp_vertex_oracle(matrix: np.ndarray, b: np.ndarray, c: np.ndarray,
                     tol: float = 1e-9):
    """Exact optimum of min <c, x> s.t. Ax = b, x >= 0 by basis enumeration.

    Exponential in n; restricted to n <= 12.  Returns (x_star, value,
    multiplier) where the multiplier y solves A_B^T y = -c_B on the optimal
    basis, i.e. the dual certificate for the Lagrangian <c, x> + <y, Ax - b>.
    """
    m, n = matrix.shape
    if n > 12:
        raise ValueError(f"vertex enumeration is limited to n <= 12, got n={n}")
    best_val = np.inf
    best_x = None
    best_basis = None
    for basis in combinations(range(n), m):
        sub = matrix[:, basis]
        try:
            xb = np.linalg.solve(sub, b)
        except np.linalg.LinAlgError:
            continue
        if not np.isfinite(xb).all() or xb.min() < -tol:
            continue
        val = float(c[list(basis)] @ xb)
        if val < best_val - 1e-12:
            best_val = val
            best_x = np.zeros(n)
            best_x[list(basis)] = np.maximum(xb, 0.0)
            best_basis = basis
    if best_x is None:
        raise ValueError("no feasible vertex found")
    y = np.linalg.solve(matrix[:, best_basis].T, -c[list(best_basis)])
    return best_x, best_val, y


def gen_lp(m: int, n: int, seed: int = 0, width: int = 1) -> ProblemInstance:
    """Random feasible bounded linear program min <c, x> s.t. Ax = b, x >= 0.

    b comes from a planted non-negative point.  The cost is drawn as
    c = A^T y + eta with eta > 0 entrywise: shifting a random cost into the
    row space this way makes the program bounded by construction (on the
    feasible set <c, x> = <y, b> + <eta, x> >= <y, b>), so no rejection loop
    is needed.  Instances with n <= 12 carry the exact optimum and dual
    certificate from the vertex-enumeration oracle.
    """
    if not m < n:
        raise ValueError(f"need m < n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((m, n))
    x_feas = rng.uniform(0.0, 1.0, size=n)
    b = matrix @ x_feas
    y_shift = rng.standard_normal(m)
    eta = rng.uniform(0.5, 1.5, size=n)
    c = matrix.T @ y_shift + eta
    A = DenseOperator(matrix, widths=uniform_widths(n, width))
    blocks: list[BlockFunction] = []
    for i in range(A.p):
        sl = A.structure.block_slice(i)
        blocks.append(LinearNonneg(c[sl]))
    g = SeparableFunction(blocks, A.structure)
    truth = None
    if n <= 12:
        x_star, val, mult = lp_vertex_oracle(matrix, b, c)
        truth = GroundTruth(optimum=x_star, optimum_value=val, multiplier=mult)
    label = f"lp(m={m},n={n},width={width},seed={seed})"
    return ProblemInstance(A, b, g, truth, label)


def _connected(p: int, edges) -> bool:
    adj: dict[int, list[int]] = {i: [] for i in range(p)}
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = {0}
    stack = [0]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == p


def gen_consensus(p: int, edges, a, seed: int = 0) -> ProblemInstance:
    """Network consensus on scalar node data a.

    A is the signed edge-incidence operator (one row e_u - e_v per edge), so
    Ax = 0 exactly when all nodes agree; each node pays |x_i - a_i|.  The
    optimum value is attained on the median interval of a (degenerate for an
    odd node count).
    """
    edges = [tuple(e) for e in edges]
    a = np.asarray(a, dtype=float)
    if a.shape != (p,):
        raise ValueError(f"expected {p} node values, got shape {a.shape}")
    if p < 2 or not edges:
        raise ValueError("need at least two nodes and one edge")
    for u, v in edges:
        if not (0 <= u < p and 0 <= v < p and u != v):
            raise ValueError(f"bad edge ({u}, {v})")
    if not _connected(p, edges):
        raise ValueError("the consensus graph must be connected")
    m = len(edges)
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    for node in range(p):
        for e, (u, v) in enumerate(edges):
            if u == node:
                indices.append(e)
                values.append(1.0)
            elif v == node:
                indices.append(e)
                values.append(-1.0)
        indptr.append(len(indices))
    A = SparseColumnOperator(m, indptr, indices, values, widths=(1,) * p)
    b = np.zeros(m)
    g = SeparableFunction([L1(1.0, shift=a[i]) for i in range(p)], A.structure)
    srt = np.sort(a)
    if p % 2 == 1:
        interval = (float(srt[p // 2]), float(srt[p // 2]))
    else:
        interval = (float(srt[p // 2 - 1]), float(srt[p // 2]))
    truth = GroundTruth(consensus_interval=interval, median=float(np.median(a)))
    label = f"consensus(p={p},edges={m},seed={seed})"
    return ProblemInstance(A, b, g, truth, label)


def gen_composite(K: BlockOperator, f_block: BlockFunction,
                  r_block: BlockFunction, b=None) -> ProblemInstance:
    """min r(v) + f(w) s.t. Kv - w = b, posed over x = (v, w) with A = [K | -I].

    The identity tail keeps the w-block's squared norm at exactly 1, so its
    per-block step is independent of K.  r_block is replicated across K's
    blocks when K has several (valid for width-agnostic functions); b
    defaults to zero, matching the plain composite reformulation.
    """
    A = hcat(K, sign=-1)
    if K.p == 1:
        r_blocks = [r_block]
    else:
        if r_block.dim is not None:
            raise ValueError(
                "a fixed-width r_block requires a single-block K"
            )
        r_blocks = [r_block] * K.p
    g = SeparableFunction([*r_blocks, f_block], A.structure)
    if b is None:
        b = np.zeros(K.rows)
    else:
        b = np.asarray(b, dtype=float)
        if b.shape != (K.rows,):
            raise ValueError(f"b must have length {K.rows}, got shape {b.shape}")
    label = f"composite(q={K.cols},m={K.rows},r={type(r_block).__name__},f={type(f_block).__name__})"
    return ProblemInstance(A, b, g, None, label)


def export_instance(instance: ProblemInstance, directory) -> Path:
    """Dump an instance to the binary on-disk form plus a JSON manifest.

    The operator is written densely unless it is sparse-column; b and any
    truth vectors/matrices go to the same binary container.  Returns the
    manifest path.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "label": instance.label,
        "rows": instance.A.rows,
        "cols": instance.A.cols,
        "widths": list(instance.A.structure.widths),
        "files": {},
    }
    if isinstance(instance.A, SparseColumnOperator):
        save_sparse(instance.A, directory / "operator")
        manifest["operator_format"] = "sparse"
        manifest["files"]["operator"] = "operator.{indptr,indices,values}"
    else:
        save_dense(instance.A, directory / "operator.bin")
        manifest["operator_format"] = "dense"
        manifest["files"]["operator"] = "operator.bin"
    save_dense(instance.b, directory / "b.bin")
    manifest["files"]["b"] = "b.bin"
    truth = instance.truth
    if truth is not None:
        for name in ("x", "noise", "signal", "L", "S", "optimum", "multiplier"):
            arr = getattr(truth, name)
            if arr is not None:
                fname = f"truth_{name}.bin"
                save_dense(np.asarray(arr, dtype=float), directory / fname)
                manifest["files"][f"truth_{name}"] = fname
        if truth.optimum_value is not None:
            manifest["optimum_value"] = truth.optimum_value
        if truth.consensus_interval is not None:
            manifest["consensus_interval"] = list(truth.consensus_interval)
    path = directory / "instance.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return path
