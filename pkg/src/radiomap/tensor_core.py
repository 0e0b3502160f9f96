"""Dense third-order tensor algebra for rank-(L, L, 1) block-term models.

Tensors are plain ``numpy`` arrays of shape ``(I, J, K)``.  The canonical
linear layout is Fortran order: element ``(i, j, k)`` lives at position
``(k * J + j) * I + i`` of ``x.ravel(order="F")``.

Unfoldings use column-major slab vectorization so that, for a synthesized
block-term tensor::

    unfold(x, 1) == partition_khatri_rao(C, B) @ A.T
    unfold(x, 2) == partition_khatri_rao(C, A) @ B.T
    unfold(x, 3) == slf_matrix(factors) @ C.T
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes are inconsistent."""


def _check_mode(mode: int) -> None:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


@dataclass(frozen=True)
class Ll1Factors:
    """Factors of ``X = sum_r (A_r B_r^T) o c_r``.

    Attributes
    ----------
    A : list of ndarray
        ``R`` matrices of shape ``(I, L_r)``.
    B : list of ndarray
        ``R`` matrices of shape ``(J, L_r)``.
    C : ndarray
        Spectral factor of shape ``(K, R)``.
    """

    A: tuple
    B: tuple
    C: np.ndarray

    def __init__(self, A: Sequence[np.ndarray], B: Sequence[np.ndarray], C: np.ndarray):
        A = tuple(np.atleast_2d(np.asarray(a, dtype=float)) for a in A)
        B = tuple(np.atleast_2d(np.asarray(b, dtype=float)) for b in B)
        C = np.asarray(C, dtype=float)
        if C.ndim == 1:
            C = C[:, None]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        self.validate()

    def validate(self) -> None:
        R = self.C.shape[1]
        if len(self.A) != R or len(self.B) != R:
            raise DimensionError(
                f"expected {R} blocks (columns of C), got {len(self.A)} A blocks "
                f"and {len(self.B)} B blocks"
            )
        if R == 0:
            raise DimensionError("at least one block is required")
        I, J = self.A[0].shape[0], self.B[0].shape[0]
        for r, (a, b) in enumerate(zip(self.A, self.B)):
            if a.shape[0] != I:
                raise DimensionError(f"A[{r}] has {a.shape[0]} rows, expected {I}")
            if b.shape[0] != J:
                raise DimensionError(f"B[{r}] has {b.shape[0]} rows, expected {J}")
            if a.shape[1] != b.shape[1]:
                raise DimensionError(
                    f"A[{r}] has {a.shape[1]} columns but B[{r}] has {b.shape[1]}"
                )

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(a.shape[1] for a in self.A)

    @property
    def R(self) -> int:
        return self.C.shape[1]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A[0].shape[0], self.B[0].shape[0], self.C.shape[0]

    @property
    def A_mat(self) -> np.ndarray:
        """Blocks of A stacked side by side, shape ``(I, sum L_r)``."""
        return np.hstack(self.A)

    @property
    def B_mat(self) -> np.ndarray:
        return np.hstack(self.B)

    @classmethod
    def from_blocks(cls, A: np.ndarray, B: np.ndarray, C: np.ndarray, L: int) -> "Ll1Factors":
        """Split concatenated ``I x LR`` and ``J x LR`` matrices into uniform blocks."""
        R = np.asarray(C).shape[1]
        if A.shape[1] != L * R or B.shape[1] != L * R:
            raise DimensionError(f"expected {L * R} columns in A and B")
        return cls(
            [A[:, r * L:(r + 1) * L] for r in range(R)],
            [B[:, r * L:(r + 1) * L] for r in range(R)],
            C,
        )

    @classmethod
    def random(cls, dims, L: int, R: int, rng=None) -> "Ll1Factors":
        """Draw iid standard normal factors with uniform block rank ``L``."""
        rng = np.random.default_rng(rng)
        I, J, K = dims
        return cls(
            [rng.standard_normal((I, L)) for _ in range(R)],
            [rng.standard_normal((J, L)) for _ in range(R)],
            rng.standard_normal((K, R)),
        )

    def slfs(self) -> list[np.ndarray]:
        """Per-block spatial matrices ``A_r B_r^T``."""
        return [a @ b.T for a, b in zip(self.A, self.B)]


def ll1_synthesize(factors: Ll1Factors) -> np.ndarray:
    """Build the ``I x J x K`` tensor ``sum_r (A_r B_r^T) o c_r``."""
    S = np.stack(factors.slfs(), axis=-1)  # I x J x R
    return np.einsum("ijr,kr->ijk", S, factors.C)


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``n`` unfolding.

    Mode 1 gives a ``JK x I`` matrix whose column ``i`` is ``vec(X(i, :, :))``,
    mode 2 gives ``IK x J`` and mode 3 gives ``IJ x K``.
    """
    _check_mode(mode)
    x = np.asarray(x)
    if x.ndim != 3:
        raise DimensionError(f"expected a third-order tensor, got ndim={x.ndim}")
    I, J, K = x.shape
    if mode == 1:
        return x.transpose(1, 2, 0).reshape(J * K, I, order="F")
    if mode == 2:
        return x.transpose(0, 2, 1).reshape(I * K, J, order="F")
    return x.reshape(I * J, K, order="F")


def fold(mat: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    _check_mode(mode)
    I, J, K = dims
    mat = np.asarray(mat)
    expected = {1: (J * K, I), 2: (I * K, J), 3: (I * J, K)}[mode]
    if mat.shape != expected:
        raise DimensionError(f"mode-{mode} matrix must be {expected}, got {mat.shape}")
    if mode == 1:
        return mat.reshape(J, K, I, order="F").transpose(2, 0, 1).copy()
    if mode == 2:
        return mat.reshape(I, K, J, order="F").transpose(0, 2, 1).copy()
    return mat.reshape(I, J, K, order="F").copy()


def mode_product(x: np.ndarray, M: np.ndarray, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of ``x`` with the rows of ``M``.

    For mode 1, ``G[m, j, k] = sum_i X[i, j, k] M[m, i]``.
    """
    _check_mode(mode)
    M = np.atleast_2d(np.asarray(M, dtype=float))
    axis = mode - 1
    if M.shape[1] != x.shape[axis]:
        raise DimensionError(
            f"matrix has {M.shape[1]} columns but tensor mode {mode} has size {x.shape[axis]}"
        )
    out = np.tensordot(M, x, axes=([1], [axis]))  # new axis first
    return np.moveaxis(out, 0, axis)


def khatri_rao(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; row ``(i, j)`` sits at ``i * J + j``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != Y.shape[1]:
        raise DimensionError(f"column counts differ: {X.shape[1]} vs {Y.shape[1]}")
    return (X[:, None, :] * Y[None, :, :]).reshape(-1, X.shape[1])


def _split_blocks(M, ranks):
    if isinstance(M, (list, tuple)):
        return [np.atleast_2d(np.asarray(m, dtype=float)) for m in M]
    M = np.asarray(M, dtype=float)
    if ranks is None:
        raise ValueError("block widths are required when M is a single matrix")
    if sum(ranks) != M.shape[1]:
        raise DimensionError(f"block widths {ranks} do not sum to {M.shape[1]} columns")
    edges = np.cumsum((0,) + tuple(ranks))
    return [M[:, edges[r]:edges[r + 1]] for r in range(len(ranks))]


def partition_khatri_rao(C: np.ndarray, M, ranks: Sequence[int] | None = None) -> np.ndarray:
    """Partition-wise Khatri-Rao product ``[c_1 kron M_1, ..., c_R kron M_R]``.

    ``M`` is either a list of blocks or one matrix split by ``ranks``.
    """
    C = np.asarray(C, dtype=float)
    blocks = _split_blocks(M, ranks)
    if len(blocks) != C.shape[1]:
        raise DimensionError(f"{len(blocks)} blocks for {C.shape[1]} columns of C")
    return np.hstack([np.kron(C[:, [r]], m) for r, m in enumerate(blocks)])


def slf_matrix(factors: Ll1Factors) -> np.ndarray:
    """``IJ x R`` matrix whose column ``r`` is ``vec(A_r B_r^T)`` (column-major)."""
    return np.column_stack([s.ravel(order="F") for s in factors.slfs()])
