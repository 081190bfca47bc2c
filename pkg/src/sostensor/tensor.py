"""Symmetric third-order tensors in dense or component form."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ENSEMBLES = ("rademacher-normalized", "sphere-uniform", "gaussian-normalized")

#: largest dimension for which an n^3 dense array is materialized
DENSE_CAP = 64

UNIT_NORM_TOL = 1e-12
SYMMETRY_TOL = 1e-12

_PERMS = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


class InvariantViolation(ValueError):
    """Input data breaks a documented invariant of a tensor type."""


class DensificationError(MemoryError):
    """Refused to materialize an n^3 array above the configured cap."""


@dataclass(frozen=True, eq=False)
class ComponentSet:
    """m unit vectors in R^n stored as the rows of ``vectors``."""

    vectors: np.ndarray
    ensemble: Optional[str] = None
    seed: Optional[int] = None

    def __post_init__(self):
        a = np.array(self.vectors, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise InvariantViolation(f"components must be a non-empty m x n matrix, got shape {a.shape}")
        norms = np.linalg.norm(a, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            i = int(bad[0])
            raise InvariantViolation(
                f"component {i} has Euclidean norm {norms[i]!r}; all components must be unit vectors")
        if self.ensemble is not None and self.ensemble not in ENSEMBLES:
            raise InvariantViolation(f"unknown ensemble {self.ensemble!r}")
        a.setflags(write=False)
        object.__setattr__(self, "vectors", a)

    @property
    def m(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def gram(self) -> np.ndarray:
        return self.vectors @ self.vectors.T


@dataclass(frozen=True, eq=False)
class SymmetricTensor3:
    """A symmetric 3-tensor, either dense or ``sum_t a_t^{(x)3}`` plus optional dense noise.

    Construct through :func:`from_components`, :func:`from_dense` or
    :func:`with_noise` rather than directly.
    """

    n: int
    components: Optional[ComponentSet] = None
    dense: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = field(default=None, repr=False)
    noise_norm: float = 0.0

    @property
    def kind(self) -> str:
        return "components" if self.components is not None else "dense"

    @property
    def has_noise(self) -> bool:
        return self.noise is not None

    def densify(self, cap: int = DENSE_CAP) -> np.ndarray:
        if self.dense is not None:
            return self.dense
        if self.n > cap:
            raise DensificationError(f"refusing to densify an n={self.n} tensor (cap {cap})")
        a = self.components.vectors
        out = np.einsum("ti,tj,tk->ijk", a, a, a)
        if self.noise is not None:
            out = out + self.noise
        return out


def _check_symmetric(t: np.ndarray, what: str) -> None:
    for p in _PERMS[1:]:
        dev = np.max(np.abs(t - t.transpose(p)), initial=0.0)
        if dev > SYMMETRY_TOL:
            raise InvariantViolation(f"{what} is not symmetric under axes {p} (max deviation {dev:.3e})")


def _frozen(x: np.ndarray) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    x.setflags(write=False)
    return x


def from_components(components: ComponentSet) -> SymmetricTensor3:
    """The tensor ``T = sum_t a_t (x) a_t (x) a_t`` in component form."""
    return SymmetricTensor3(n=components.n, components=components)


def from_dense(array: np.ndarray) -> SymmetricTensor3:
    t = np.asarray(array, dtype=np.float64)
    if t.ndim != 3 or not (t.shape[0] == t.shape[1] == t.shape[2]):
        raise InvariantViolation(f"dense tensor must be n x n x n, got {t.shape}")
    _check_symmetric(t, "dense tensor")
    return SymmetricTensor3(n=t.shape[0], dense=_frozen(t))


def with_noise(tensor: SymmetricTensor3, noise: np.ndarray,
               noise_norm: float | None = None) -> SymmetricTensor3:
    """Return ``tensor + noise``; component form keeps the noise as a separate term.

    ``noise_norm`` records the spectral norm of the unfolded noise and is
    computed when not supplied.
    """
    e = np.asarray(noise, dtype=np.float64)
    n = tensor.n
    if e.shape != (n, n, n):
        raise InvariantViolation(f"noise must have shape {(n, n, n)}, got {e.shape}")
    _check_symmetric(e, "noise tensor")
    if tensor.components is None:
        return SymmetricTensor3(n=n, dense=_frozen(tensor.dense + e))
    total = e if tensor.noise is None else tensor.noise + e
    if noise_norm is None or tensor.noise is not None:
        noise_norm = unfolding_norm(total)
    return SymmetricTensor3(n=n, components=tensor.components, noise=_frozen(total),
                            noise_norm=float(noise_norm))


def unfolding_norm(array: np.ndarray) -> float:
    """Exact spectral norm of the n x n^2 unfolding of a dense array."""
    n = array.shape[0]
    return float(np.linalg.norm(array.reshape(n, n * n), 2))


def symmetrize(t: np.ndarray) -> np.ndarray:
    """Average of ``t`` over the six index permutations."""
    return sum(t.transpose(p) for p in _PERMS) / 6.0


def _vector(x, n: int, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {x.shape}")
    return x


def eval_cubic(tensor: SymmetricTensor3, x) -> float:
    """``T(x, x, x)``."""
    x = _vector(x, tensor.n)
    if tensor.components is None:
        return float(np.einsum("ijk,i,j,k->", tensor.dense, x, x, x))
    value = float(np.sum((tensor.components.vectors @ x) ** 3))
    if tensor.noise is not None:
        value += float(np.einsum("ijk,i,j,k->", tensor.noise, x, x, x))
    return value


def eval_multilinear(tensor: SymmetricTensor3, x, y, z) -> float:
    """``T(x, y, z) = sum_{ijk} T_ijk x_i y_j z_k``."""
    n = tensor.n
    x, y, z = _vector(x, n, "x"), _vector(y, n, "y"), _vector(z, n, "z")
    if tensor.components is None:
        return float(np.einsum("ijk,i,j,k->", tensor.dense, x, y, z))
    a = tensor.components.vectors
    value = float(np.sum((a @ x) * (a @ y) * (a @ z)))
    if tensor.noise is not None:
        value += float(np.einsum("ijk,i,j,k->", tensor.noise, x, y, z))
    return value


def contract(tensor: SymmetricTensor3, x) -> np.ndarray:
    """The vector ``v`` with ``v_i = T(e_i, x, x)``."""
    x = _vector(x, tensor.n)
    if tensor.components is None:
        return np.einsum("ijk,j,k->i", tensor.dense, x, x)
    a = tensor.components.vectors
    v = a.T @ ((a @ x) ** 2)
    if tensor.noise is not None:
        v = v + np.einsum("ijk,j,k->i", tensor.noise, x, x)
    return v


def contract_rows(tensor: SymmetricTensor3, xs: np.ndarray) -> np.ndarray:
    """Row-wise :func:`contract` for a batch ``xs`` of shape (b, n)."""
    xs = np.asarray(xs, dtype=np.float64)
    if tensor.components is None:
        return np.einsum("ijk,bj,bk->bi", tensor.dense, xs, xs)
    a = tensor.components.vectors
    v = ((xs @ a.T) ** 2) @ a
    if tensor.noise is not None:
        v = v + np.einsum("ijk,bj,bk->bi", tensor.noise, xs, xs)
    return v


def eval_cubic_rows(tensor: SymmetricTensor3, xs: np.ndarray) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    return np.einsum("bi,bi->b", contract_rows(tensor, xs), xs)


def unfold(tensor: SymmetricTensor3, cap: int = DENSE_CAP) -> np.ndarray:
    """n x n^2 unfolding with column index ``j * n + k``."""
    n = tensor.n
    return tensor.densify(cap).reshape(n, n * n)


def kronecker(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Kronecker product; block (i, j) of the result is ``u[i, j] * v``."""
    u = np.atleast_2d(np.asarray(u, dtype=np.float64))
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    p, q = u.shape
    r, s = v.shape
    return (u[:, None, :, None] * v[None, :, None, :]).reshape(p * r, q * s)


def frobenius_distance_to(tensor: SymmetricTensor3, rows: np.ndarray, block: int = 4096) -> float:
    """``|| T - sum_i b_i^{(x)3} ||_F`` for the rows ``b_i`` of ``rows``.

    Component-form tensors are never densified whole: the n x n^2 unfolding
    of the difference is formed ``block`` columns at a time as
    ``C^T diag(w) (C * C)`` with ``C = [A; B]`` and ``w = (1, .., 1, -1, .., -1)``.
    This costs ``O(n^3 (m + k))`` but avoids the cancellation of the Gram
    expansion ``sum (AA^T)^3 - 2 sum (AB^T)^3 + sum (BB^T)^3``, whose round-off
    floor (~sqrt(eps m)) is far above the accuracy refinement reaches.
    """
    b = np.asarray(rows, dtype=np.float64).reshape(-1, tensor.n)
    n = tensor.n
    if tensor.components is None:
        diff = tensor.dense - np.einsum("ti,tj,tk->ijk", b, b, b)
        return float(np.sqrt(np.sum(diff * diff)))
    c = np.vstack([tensor.components.vectors, b])
    w = np.concatenate([np.ones(tensor.components.m), -np.ones(len(b))])
    left = (c * w[:, None]).T
    noise = None if tensor.noise is None else tensor.noise.reshape(n, n * n)
    step = max(1, block // n)
    total = 0.0
    for j0 in range(0, n, step):
        j1 = min(n, j0 + step)
        kr = (c[:, j0:j1, None] * c[:, None, :]).reshape(len(c), (j1 - j0) * n)
        r = left @ kr
        if noise is not None:
            r += noise[:, j0 * n:j1 * n]
        total += float(np.sum(r * r))
    return float(np.sqrt(total))
