"""Matrix-free estimation of the largest singular value."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Apply = Callable[[np.ndarray], np.ndarray]

_EPS = np.finfo(float).eps


class AdjointMismatch(ValueError):
    """The supplied adjoint does not match the forward operator."""


class SpectralNonConvergence(RuntimeError):
    """An estimate needed for a certificate did not reach its tolerance."""

    def __init__(self, estimate: "SpectralEstimate", what: str = "operator"):
        super().__init__(
            f"spectral estimate for {what} did not converge after "
            f"{estimate.iterations} iterations (relative residual {estimate.residual:.3e})"
        )
        self.estimate = estimate


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    iterations: int
    residual: float
    converged: bool

    def certified(self, tol: float) -> float:
        """Upper bound used by certificates: the estimate inflated by ``1 + 2 tol``."""
        return self.value * (1.0 + 2.0 * tol)


def check_adjoint(apply: Apply, adjoint: Apply, dim_in: int, dim_out: int,
                  rng: np.random.Generator, trials: int = 2) -> None:
    for _ in range(trials):
        u = rng.standard_normal(dim_in)
        v = rng.standard_normal(dim_out)
        au = np.asarray(apply(u))
        atv = np.asarray(adjoint(v))
        if au.shape != (dim_out,) or atv.shape != (dim_in,):
            raise AdjointMismatch(
                f"operator shapes {au.shape}/{atv.shape} do not match ({dim_out},)/({dim_in},)")
        lhs = float(au @ v)
        rhs = float(u @ atv)
        # absolute 1e-8 for unit-scale operators, relative beyond that
        scale = max(1.0, np.linalg.norm(au) * np.linalg.norm(v), np.linalg.norm(u) * np.linalg.norm(atv))
        if abs(lhs - rhs) > 1e-8 * scale:
            raise AdjointMismatch(f"<Au,v> = {lhs!r} but <u,A^T v> = {rhs!r}")


def spectral_norm(apply: Apply, adjoint: Apply, dim_in: int, dim_out: int,
                  tol: float = 1e-9, max_iter: int | None = None, seed: int = 0,
                  method: str = "power", verify_adjoint: bool = True) -> SpectralEstimate:
    """Estimate the largest singular value of a linear operator.

    Parameters
    ----------
    apply, adjoint : callable
        ``x -> A x`` and ``y -> A^T y``.
    dim_in, dim_out : int
        Operator shape is ``(dim_out, dim_in)``.
    tol : float
        Relative accuracy target.  For the power method the stopping rule
        requires both the last increment and its geometric extrapolation to
        the limit to fall below ``tol * value``; the reported residual is the
        larger of the two.
    max_iter : int, optional
        Defaults to ``max(10 * dim_in, 5000)``; convergence is governed by
        the spectral gap, not the dimension.
    seed : int
        Seeds the start vector and the adjoint probe.
    method : {"power", "lanczos"}
        Power iteration on the Gram operator ``A^T A`` or ARPACK Lanczos on
        the same operator.

    Returns
    -------
    SpectralEstimate
        ``value`` is ``||A x||`` at the final unit iterate, hence never above
        the true norm.
    """
    from .rng import stream

    if dim_in < 1 or dim_out < 1:
        raise ValueError("operator dimensions must be positive")
    if max_iter is None:
        max_iter = max(10 * dim_in, 5000)
    rng = stream(seed, "tensor-core", "spectral-norm")
    if verify_adjoint:
        check_adjoint(apply, adjoint, dim_in, dim_out, rng)
    if method == "power":
        return _power(apply, adjoint, dim_in, tol, max_iter, rng)
    if method == "lanczos":
        return _lanczos(apply, adjoint, dim_in, tol, max_iter, rng)
    raise ValueError(f"unknown method {method!r}")


def _start(rng: np.random.Generator, dim: int) -> np.ndarray:
    x = rng.standard_normal(dim)
    return x / np.linalg.norm(x)


def _power(apply, adjoint, dim, tol, max_iter, rng) -> SpectralEstimate:
    x = _start(rng, dim)
    restarted = False
    prev = None
    prev_step = None
    value = 0.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        w = apply(x)
        value = float(np.linalg.norm(w))
        z = adjoint(w)
        zn = float(np.linalg.norm(z))
        if value == 0.0 or zn == 0.0:
            if restarted:
                return SpectralEstimate(0.0, it, 0.0, True)
            restarted = True
            x = _start(rng, dim)
            prev = prev_step = None
            continue
        x = z / zn
        if prev is not None:
            step = value - prev
            if step <= 16 * _EPS * value:
                # increments at round-off level: the iterate is stationary
                residual = max(step, 0.0) / value
                return SpectralEstimate(value, it, residual, residual <= tol)
            tail = np.inf
            if prev_step is not None and prev_step > 0:
                ratio = step / prev_step
                if ratio < 1.0:
                    tail = step * ratio / (1.0 - ratio)
            residual = max(step, tail) / value
            if residual <= tol:
                return SpectralEstimate(value, it, residual, True)
            prev_step = step
        prev = value
    return SpectralEstimate(value, max_iter, float(residual), False)


def _lanczos(apply, adjoint, dim, tol, max_iter, rng) -> SpectralEstimate:
    from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

    def gram(v):
        return adjoint(apply(v))

    if dim <= 2:
        g = np.column_stack([gram(e) for e in np.eye(dim)])
        lam = float(np.max(np.linalg.eigvalsh(0.5 * (g + g.T))))
        return SpectralEstimate(float(np.sqrt(max(lam, 0.0))), dim, 0.0, True)
    op = LinearOperator((dim, dim), matvec=gram, dtype=float)
    v0 = _start(rng, dim)
    try:
        lam, vec = eigsh(op, k=1, which="LA", tol=tol * 1e-3, maxiter=max_iter, v0=v0)
    except ArpackNoConvergence as exc:
        if len(exc.eigenvalues) == 0:
            return SpectralEstimate(0.0, max_iter, float("inf"), False)
        lam, vec = exc.eigenvalues, exc.eigenvectors
        x = vec[:, 0] / np.linalg.norm(vec[:, 0])
        return SpectralEstimate(float(np.linalg.norm(apply(x))), max_iter, float("inf"), False)
    x = vec[:, 0] / np.linalg.norm(vec[:, 0])
    value = float(np.linalg.norm(apply(x)))
    if value == 0.0:
        return SpectralEstimate(0.0, 1, 0.0, True)
    res = float(np.linalg.norm(gram(x) - value**2 * x)) / value**2
    return SpectralEstimate(value, 1, res, res <= tol)


def dense_operator(matrix: np.ndarray):
    """``(apply, adjoint, dim_in, dim_out)`` for an explicit matrix."""
    a = np.asarray(matrix, dtype=float)
    return (lambda x: a @ x), (lambda y: a.T @ y), a.shape[1], a.shape[0]
