"""Block-structured linear operators with per-block apply/adjoint access.

An operator A in R^{m x n} is addressed as p contiguous column blocks
A = [A_1 | ... | A_p].  Coordinate solvers touch single blocks (A_i v and
A_i^T y) far more often than the full matrix, so every implementation
provides block access plus cached per-block squared spectral norms
lambda_i = lambda_max(A_i^T A_i).

Implementations cover the operator families the benchmark problems need:
dense matrices, column-major sparse matrices, (scaled) identities,
horizontal concatenations [K | +-I], row-sampled orthonormal cosine
transforms, and low-rank products L @ R.
"""

from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np

__all__ = [
    "BlockStructure",
    "BlockOperator",
    "DenseOperator",
    "SparseColumnOperator",
    "IdentityOperator",
    "HcatOperator",
    "SampledDctOperator",
    "LowRankOperator",
    "hcat",
    "sampled_transform",
    "low_rank_product",
    "uniform_widths",
    "power_iteration_sym",
    "save_dense",
    "load_dense",
    "save_sparse",
    "load_sparse",
]

# Power-iteration policy for spectral norms: relative tolerance on the
# Rayleigh quotient, iteration cap, and a fixed seed for the start vector so
# computed norms are reproducible.
POWER_TOL = 1e-8
POWER_MAX_ITER = 5000
_POWER_SEED = 0x5BC60


def uniform_widths(n: int, width: int) -> tuple[int, ...]:
    """Split n columns into width-sized blocks; a shorter last block absorbs
    the remainder when width does not divide n."""
    if not 1 <= width <= n:
        raise ValueError(f"width must be in [1, {n}], got {width}")
    full, rem = divmod(n, width)
    return (width,) * full + ((rem,) if rem else ())


class BlockStructure:
    """Column partition of an m-by-n operator into p contiguous blocks."""

    __slots__ = ("rows", "widths", "offsets", "_slices")

    def __init__(self, rows: int, widths):
        rows = int(rows)
        if rows < 1:
            raise ValueError(f"rows must be positive, got {rows}")
        widths = tuple(int(w) for w in widths)
        if not widths:
            raise ValueError("at least one block is required")
        if any(w < 1 for w in widths):
            raise ValueError(f"block widths must be positive, got {widths}")
        self.rows = rows
        self.widths = widths
        offsets = [0]
        for w in widths:
            offsets.append(offsets[-1] + w)
        self.offsets = tuple(offsets)
        self._slices = tuple(slice(a, b) for a, b in zip(offsets, offsets[1:]))

    @property
    def p(self) -> int:
        return len(self.widths)

    @property
    def n(self) -> int:
        return self.offsets[-1]

    def check_block(self, i: int) -> None:
        if not 0 <= i < self.p:
            raise IndexError(f"block index {i} out of range [0, {self.p})")

    def block_slice(self, i: int) -> slice:
        if i < 0:
            raise IndexError(f"block index {i} out of range [0, {self.p})")
        try:
            return self._slices[i]
        except IndexError:
            raise IndexError(f"block index {i} out of range [0, {self.p})") from None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BlockStructure)
            and self.rows == other.rows
            and self.widths == other.widths
        )

    def __repr__(self) -> str:
        return f"BlockStructure(rows={self.rows}, p={self.p}, n={self.n})"


def power_iteration_sym(matvec, dim: int, tol: float = POWER_TOL,
                        max_iter: int = POWER_MAX_ITER, seed: int = _POWER_SEED) -> float:
    """Largest eigenvalue of a symmetric PSD operator given through matvec.

    Stops when the Rayleigh quotient changes by less than ``tol`` relatively.
    Returns 0.0 for the zero operator.
    """
    if dim < 1:
        raise ValueError("dimension must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * max(abs(lam_new), np.finfo(float).tiny):
            return lam_new
        lam = lam_new
    return lam


class BlockOperator(ABC):
    """Abstract linear operator with column-block addressing.

    Subclasses implement ``apply_block`` / ``adjoint_apply_block`` (and
    usually override ``apply`` / ``adjoint_apply`` with something faster).
    Instances are immutable after construction apart from lazily cached
    norms, so read-only sharing across runs is safe.
    """

    def __init__(self, structure: BlockStructure):
        self._structure = structure
        self._block_norms: dict[int, float] = {}
        self._sq_norm: float | None = None

    @property
    def structure(self) -> BlockStructure:
        return self._structure

    @property
    def rows(self) -> int:
        return self._structure.rows

    @property
    def cols(self) -> int:
        return self._structure.n

    @property
    def p(self) -> int:
        return self._structure.p

    # -- validation helpers ------------------------------------------------

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.cols,):
            raise ValueError(f"expected length-{self.cols} vector, got shape {x.shape}")
        return x

    def _check_y(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.rows,):
            raise ValueError(f"expected length-{self.rows} vector, got shape {y.shape}")
        return y

    def _check_block_vec(self, i: int, v) -> np.ndarray:
        self._structure.check_block(i)
        v = np.asarray(v, dtype=float)
        w = self._structure.widths[i]
        if v.shape != (w,):
            raise ValueError(f"block {i} expects a length-{w} vector, got shape {v.shape}")
        return v

    # -- core interface ----------------------------------------------------

    @abstractmethod
    def apply_block(self, i: int, v) -> np.ndarray:
        """A_i v for block i."""

    @abstractmethod
    def adjoint_apply_block(self, i: int, y) -> np.ndarray:
        """A_i^T y for block i."""

    def apply(self, x) -> np.ndarray:
        """A x.  Default sums per-block contributions."""
        x = self._check_x(x)
        y = np.zeros(self.rows)
        for i in range(self.p):
            y += self.apply_block(i, x[self._structure.block_slice(i)])
        return y

    def adjoint_apply(self, y) -> np.ndarray:
        """A^T y.  Default concatenates per-block adjoints."""
        y = self._check_y(y)
        out = np.empty(self.cols)
        for i in range(self.p):
            out[self._structure.block_slice(i)] = self.adjoint_apply_block(i, y)
        return out

    # -- spectral norms ----------------------------------------------------

    def block_sq_norm(self, i: int) -> float:
        """lambda_i = lambda_max(A_i^T A_i), cached.

        Width-1 blocks get the exact squared column norm; wider blocks use
        power iteration on the block Gram operator.
        """
        self._structure.check_block(i)
        lam = self._block_norms.get(i)
        if lam is None:
            lam = self._compute_block_sq_norm(i)
            self._block_norms[i] = lam
        return lam

    def _compute_block_sq_norm(self, i: int) -> float:
        w = self._structure.widths[i]
        if w == 1:
            col = self.apply_block(i, np.ones(1))
            return float(col @ col)
        return power_iteration_sym(
            lambda v: self.adjoint_apply_block(i, self.apply_block(i, v)), w
        )

    def block_sq_norms(self) -> np.ndarray:
        return np.array([self.block_sq_norm(i) for i in range(self.p)])

    def sq_norm(self) -> float:
        """lambda_max(A^T A) = ||A||^2 via power iteration, cached."""
        if self._sq_norm is None:
            self._sq_norm = power_iteration_sym(
                lambda v: self.adjoint_apply(self.apply(v)), self.cols
            )
        return self._sq_norm

    def norm(self) -> float:
        return float(np.sqrt(self.sq_norm()))

    def to_dense(self) -> np.ndarray:
        """Materialize the full matrix (testing / serialization helper)."""
        out = np.empty((self.rows, self.cols))
        for i in range(self.p):
            w = self._structure.widths[i]
            sl = self._structure.block_slice(i)
            basis = np.zeros(w)
            for j in range(w):
                basis[j] = 1.0
                out[:, sl.start + j] = self.apply_block(i, basis)
                basis[j] = 0.0
        return out


class DenseOperator(BlockOperator):
    """Explicit dense matrix, stored row-major contiguous."""

    def __init__(self, matrix, widths=None):
        matrix = np.ascontiguousarray(np.asarray(matrix, dtype=float))
        if matrix.ndim != 2:
            raise ValueError(f"matrix must be 2-D, got shape {matrix.shape}")
        m, n = matrix.shape
        if widths is None:
            widths = (n,)
        structure = BlockStructure(m, widths)
        if structure.n != n:
            raise ValueError(f"widths sum to {structure.n}, matrix has {n} columns")
        super().__init__(structure)
        self._m = matrix

    @property
    def matrix(self) -> np.ndarray:
        return self._m

    def apply(self, x) -> np.ndarray:
        return self._m @ self._check_x(x)

    def adjoint_apply(self, y) -> np.ndarray:
        return self._m.T @ self._check_y(y)

    def apply_block(self, i: int, v) -> np.ndarray:
        v = self._check_block_vec(i, v)
        sl = self._structure.block_slice(i)
        if v.shape[0] == 1:
            return self._m[:, sl.start] * v[0]
        return self._m[:, sl] @ v

    def adjoint_apply_block(self, i: int, y) -> np.ndarray:
        y = self._check_y(y)
        sl = self._structure.block_slice(i)
        if sl.stop - sl.start == 1:
            return np.array([np.dot(self._m[:, sl.start], y)])
        return self._m[:, sl].T @ y

    def to_dense(self) -> np.ndarray:
        return self._m.copy()


class SparseColumnOperator(BlockOperator):
    """Column-major sparse matrix: per-column row-index and value slices.

    Storage mirrors compressed sparse column form (indptr / indices /
    values) because coordinate updates consume whole columns.
    """

    def __init__(self, rows, indptr, indices, values, widths=None):
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        n = indptr.shape[0] - 1
        if n < 1 or indptr[0] != 0 or indptr[-1] != indices.shape[0]:
            raise ValueError("malformed indptr")
        if indices.shape != values.shape:
            raise ValueError("indices and values must have equal length")
        if indices.size and (indices.min() < 0 or indices.max() >= rows):
            raise ValueError("row index out of range")
        if widths is None:
            widths = (n,)
        structure = BlockStructure(rows, widths)
        if structure.n != n:
            raise ValueError(f"widths sum to {structure.n}, operator has {n} columns")
        super().__init__(structure)
        self._indptr = indptr
        self._indices = indices
        self._values = values

    @classmethod
    def from_dense(cls, matrix, widths=None) -> "SparseColumnOperator":
        matrix = np.asarray(matrix, dtype=float)
        m, n = matrix.shape
        indptr = [0]
        indices: list[int] = []
        values: list[float] = []
        for j in range(n):
            nz = np.nonzero(matrix[:, j])[0]
            indices.extend(int(r) for r in nz)
            values.extend(float(matrix[r, j]) for r in nz)
            indptr.append(len(indices))
        return cls(m, indptr, indices, values, widths=widths)

    def _col_apply(self, out: np.ndarray, j: int, xj: float) -> None:
        a, b = self._indptr[j], self._indptr[j + 1]
        out[self._indices[a:b]] += self._values[a:b] * xj

    def apply(self, x) -> np.ndarray:
        x = self._check_x(x)
        out = np.zeros(self.rows)
        for j in range(self.cols):
            if x[j] != 0.0:
                self._col_apply(out, j, x[j])
        return out

    def apply_block(self, i: int, v) -> np.ndarray:
        v = self._check_block_vec(i, v)
        sl = self._structure.block_slice(i)
        out = np.zeros(self.rows)
        for k, j in enumerate(range(sl.start, sl.stop)):
            if v[k] != 0.0:
                self._col_apply(out, j, v[k])
        return out

    def adjoint_apply_block(self, i: int, y) -> np.ndarray:
        y = self._check_y(y)
        sl = self._structure.block_slice(i)
        out = np.empty(sl.stop - sl.start)
        for k, j in enumerate(range(sl.start, sl.stop)):
            a, b = self._indptr[j], self._indptr[j + 1]
            out[k] = np.dot(self._values[a:b], y[self._indices[a:b]])
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for j in range(self.cols):
            a, b = self._indptr[j], self._indptr[j + 1]
            out[self._indices[a:b], j] = self._values[a:b]
        return out

    @property
    def triplet(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self._indptr, self._indices, self._values


class IdentityOperator(BlockOperator):
    """scale * I on R^dim."""

    def __init__(self, dim: int, scale: float = 1.0, widths=None):
        if widths is None:
            widths = (dim,)
        structure = BlockStructure(dim, widths)
        if structure.n != dim:
            raise ValueError("identity operator must be square")
        super().__init__(structure)
        self._scale = float(scale)

    @property
    def scale(self) -> float:
        return self._scale

    def apply(self, x) -> np.ndarray:
        return self._scale * self._check_x(x)

    def adjoint_apply(self, y) -> np.ndarray:
        return self._scale * self._check_y(y)

    def apply_block(self, i: int, v) -> np.ndarray:
        v = self._check_block_vec(i, v)
        out = np.zeros(self.rows)
        out[self._structure.block_slice(i)] = self._scale * v
        return out

    def adjoint_apply_block(self, i: int, y) -> np.ndarray:
        y = self._check_y(y)
        return self._scale * y[self._structure.block_slice(i)]

    def _compute_block_sq_norm(self, i: int) -> float:
        return self._scale * self._scale

    def to_dense(self) -> np.ndarray:
        return self._scale * np.eye(self.rows)


class HcatOperator(BlockOperator):
    """[K | sign*I]: a head operator with a signed identity tail.

    The tail contributes blocks whose squared spectral norm is exactly 1,
    which lets per-block stepsizes on the tail stay large regardless of K.
    """

    def __init__(self, head: BlockOperator, sign: int = -1, tail_widths=None):
        if sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {sign}")
        m = head.rows
        if tail_widths is None:
            tail_widths = (m,)
        tail = BlockStructure(m, tail_widths)
        if tail.n != m:
            raise ValueError(f"identity tail widths sum to {tail.n}, expected {m}")
        super().__init__(BlockStructure(m, head.structure.widths + tail.widths))
        self._head = head
        self._sign = float(sign)
        self._tail = tail

    @property
    def head(self) -> BlockOperator:
        return self._head

    @property
    def sign(self) -> float:
        return self._sign

    def apply(self, x) -> np.ndarray:
        x = self._check_x(x)
        q = self._head.cols
        return self._head.apply(x[:q]) + self._sign * x[q:]

    def adjoint_apply(self, y) -> np.ndarray:
        y = self._check_y(y)
        return np.concatenate([self._head.adjoint_apply(y), self._sign * y])

    def apply_block(self, i: int, v) -> np.ndarray:
        v = self._check_block_vec(i, v)
        ph = self._head.p
        if i < ph:
            return self._head.apply_block(i, v)
        out = np.zeros(self.rows)
        out[self._tail.block_slice(i - ph)] = self._sign * v
        return out

    def adjoint_apply_block(self, i: int, y) -> np.ndarray:
        y = self._check_y(y)
        ph = self._head.p
        if i < ph:
            return self._head.adjoint_apply_block(i, y)
        return self._sign * y[self._tail.block_slice(i - ph)]

    def _compute_block_sq_norm(self, i: int) -> float:
        if i < self._head.p:
            return self._head.block_sq_norm(i)
        return 1.0

    def to_dense(self) -> np.ndarray:
        return np.hstack([self._head.to_dense(), self._sign * np.eye(self.rows)])


class SampledDctOperator(BlockOperator):
    """Selected rows of the orthonormal type-II cosine transform.

    Entry (r, j) is ``c(k_r) * cos(pi * (2j+1) * k_r / (2n))`` where k_r is
    the r-th sampled row index, ``c(0) = sqrt(1/n)`` and ``c(k) = sqrt(2/n)``
    otherwise.  Columns are evaluated analytically on demand; the full
    n-by-n transform is never materialized.
    """

    _CHUNK = 512

    def __init__(self, rows_idx, n: int, widths=None):
        rows_idx = np.asarray(rows_idx, dtype=np.int64)
        if rows_idx.ndim != 1 or rows_idx.size == 0:
            raise ValueError("rows_idx must be a non-empty 1-D index list")
        if rows_idx.size != np.unique(rows_idx).size:
            raise ValueError("duplicate row indices")
        if rows_idx.min() < 0 or rows_idx.max() >= n:
            raise ValueError(f"row indices must lie in [0, {n})")
        if widths is None:
            widths = (n,)
        structure = BlockStructure(rows_idx.size, widths)
        if structure.n != n:
            raise ValueError(f"widths sum to {structure.n}, expected {n}")
        super().__init__(structure)
        self._k = rows_idx
        self._n = n
        coef = np.full(rows_idx.size, np.sqrt(2.0 / n))
        coef[rows_idx == 0] = np.sqrt(1.0 / n)
        self._coef = coef

    @property
    def sampled_rows(self) -> np.ndarray:
        return self._k.copy()

    def columns(self, j0: int, j1: int) -> np.ndarray:
        """Evaluate columns [j0, j1) analytically."""
        j = np.arange(j0, j1)
        ang = (np.pi / (2.0 * self._n)) * self._k[:, None] * (2 * j + 1)[None, :]
        return self._coef[:, None] * np.cos(ang)

    def apply(self, x) -> np.ndarray:
        x = self._check_x(x)
        out = np.zeros(self.rows)
        for j0 in range(0, self._n, self._CHUNK):
            j1 = min(j0 + self._CHUNK, self._n)
            out += self.columns(j0, j1) @ x[j0:j1]
        return out

    def apply_block(self, i: int, v) -> np.ndarray:
        v = self._check_block_vec(i, v)
        sl = self._structure.block_slice(i)
        return self.columns(sl.start, sl.stop) @ v

    def adjoint_apply_block(self, i: int, y) -> np.ndarray:
        y = self._check_y(y)
        sl = self._structure.block_slice(i)
        return self.columns(sl.start, sl.stop).T @ y

    def adjoint_apply(self, y) -> np.ndarray:
        y = self._check_y(y)
        out = np.empty(self._n)
        for j0 in range(0, self._n, self._CHUNK):
            j1 = min(j0 + self._CHUNK, self._n)
            out[j0:j1] = self.columns(j0, j1).T @ y
        return out

    def to_dense(self) -> np.ndarray:
        return self.columns(0, self._n)


class LowRankOperator(BlockOperator):
    """Product L @ R held in factored form; rank is at most the inner dim."""

    def __init__(self, left, right, widths=None):
        left = np.ascontiguousarray(np.asarray(left, dtype=float))
        right = np.ascontiguousarray(np.asarray(right, dtype=float))
        if left.ndim != 2 or right.ndim != 2:
            raise ValueError("factors must be 2-D")
        if left.shape[1] != right.shape[0]:
            raise ValueError(
                f"inner dimensions disagree: {left.shape} vs {right.shape}"
            )
        m, n = left.shape[0], right.shape[1]
        if widths is None:
            widths = (n,)
        structure = BlockStructure(m, widths)
        if structure.n != n:
            raise ValueError(f"widths sum to {structure.n}, expected {n}")
        super().__init__(structure)
        self._l = left
        self._r = right

    @property
    def factors(self) -> tuple[np.ndarray, np.ndarray]:
        return self._l, self._r

    def apply(self, x) -> np.ndarray:
        return self._l @ (self._r @ self._check_x(x))

    def adjoint_apply(self, y) -> np.ndarray:
        return self._r.T @ (self._l.T @ self._check_y(y))

    def apply_block(self, i: int, v) -> np.ndarray:
        v = self._check_block_vec(i, v)
        sl = self._structure.block_slice(i)
        if v.shape[0] == 1:
            return self._l @ (self._r[:, sl.start] * v[0])
        return self._l @ (self._r[:, sl] @ v)

    def adjoint_apply_block(self, i: int, y) -> np.ndarray:
        y = self._check_y(y)
        sl = self._structure.block_slice(i)
        w = self._l.T @ y
        if sl.stop - sl.start == 1:
            return np.array([np.dot(self._r[:, sl.start], w)])
        return self._r[:, sl].T @ w

    def to_dense(self) -> np.ndarray:
        return self._l @ self._r


def hcat(head: BlockOperator, sign: int = -1, tail_widths=None) -> HcatOperator:
    """Concatenate a signed identity tail: hcat(K, -1) builds [K | -I]."""
    return HcatOperator(head, sign, tail_widths=tail_widths)


def sampled_transform(rows_idx, n: int, widths=None) -> SampledDctOperator:
    """Operator made of the given rows of the orthonormal DCT-II on R^n."""
    return SampledDctOperator(rows_idx, n, widths=widths)


def low_rank_product(left, right, widths=None) -> LowRankOperator:
    """Operator (L @ R) kept in factored form."""
    return LowRankOperator(left, right, widths=widths)


# -- on-disk form ----------------------------------------------------------
#
# Dense: 8-byte little-endian header (m, n as uint32) followed by m*n
# float64 values in column-major order.  Sparse: three files
# <base>.indptr (same 8-byte header + int64 data), <base>.indices (int64),
# <base>.values (float64), all little-endian.

_HEADER = struct.Struct("<II")


def save_dense(target, path) -> None:
    """Write a dense operator or matrix in the binary column-major form."""
    if isinstance(target, BlockOperator):
        matrix = target.to_dense()
    else:
        matrix = np.asarray(target, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
    m, n = matrix.shape
    payload = _HEADER.pack(m, n) + np.asfortranarray(matrix).tobytes(order="F")
    Path(path).write_bytes(payload)


def load_dense(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    m, n = _HEADER.unpack_from(raw)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != m * n:
        raise ValueError(f"{path}: expected {m * n} values, found {data.size}")
    return np.asarray(data.reshape((m, n), order="F"))


def save_sparse(op: SparseColumnOperator, base) -> None:
    """Write a sparse operator as the (indptr, indices, values) triplet."""
    base = Path(base)
    indptr, indices, values = op.triplet
    head = _HEADER.pack(op.rows, op.cols)
    base.with_suffix(base.suffix + ".indptr").write_bytes(
        head + indptr.astype("<i8").tobytes()
    )
    base.with_suffix(base.suffix + ".indices").write_bytes(indices.astype("<i8").tobytes())
    base.with_suffix(base.suffix + ".values").write_bytes(values.astype("<f8").tobytes())


def load_sparse(base, widths=None) -> SparseColumnOperator:
    base = Path(base)
    raw = base.with_suffix(base.suffix + ".indptr").read_bytes()
    m, n = _HEADER.unpack_from(raw)
    indptr = np.frombuffer(raw, dtype="<i8", offset=_HEADER.size)
    if indptr.size != n + 1:
        raise ValueError(f"{base}: expected {n + 1} indptr entries, found {indptr.size}")
    indices = np.frombuffer(
        base.with_suffix(base.suffix + ".indices").read_bytes(), dtype="<i8"
    )
    values = np.frombuffer(
        base.with_suffix(base.suffix + ".values").read_bytes(), dtype="<f8"
    )
    return SparseColumnOperator(m, indptr, indices, values, widths=widths)
