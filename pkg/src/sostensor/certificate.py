"""Component-aware certificate for the injective norm of ``sum_i a_i^{(x)3}``.

For unit ``x`` the certified chain is

    T(x,x,x)^2 <= S4(x) + p(x)                       (Cauchy-Schwarz)
    S4(x)^2    <= S6(x) + sum_{i!=j} <a_i,a_j> <a_i,x>^3 <a_j,x>^3
               <= ||B B^T|| + sqrt(c) * ||A||^2 * S4(x)
    p(x)       = (x(x)x)^T M (x(x)x) <= ||M||

with ``S_k(x) = sum_i <a_i,x>^k``, ``B`` the matrix with rows ``a_i^{(x)3}``,
``c = max_{i!=j} <a_i,a_j>^2`` and
``M = sum_{i!=j} <a_i,a_j> (a_i(x)a_j)(a_i(x)a_j)^T``.  The middle inequality
is closed with the quadratic formula, ``||B B^T||`` is bounded by
Gershgorin, and noise adds its unfolding norm.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .spectral import SpectralNonConvergence, dense_operator, spectral_norm
from .tensor import ComponentSet, SymmetricTensor3, unfolding_norm


class ComponentFormRequired(ValueError):
    def __init__(self):
        super().__init__(
            "the component-aware certificate needs the tensor's components; "
            "use the moment SDP (certify --mode sdp) for component-free certification")


def default_threshold(n: int) -> float:
    """``1 + 1/ln n``."""
    if n < 2:
        raise ValueError("the default threshold 1 + 1/ln n needs n >= 2")
    return 1.0 + 1.0 / math.log(n)


@dataclass(frozen=True)
class CertificateReport:
    gersh_bound: float
    max_coherence_sq: float
    a_norm_sq: float
    cross_term_norm: float
    s4_bound: float
    noise_norm: float
    bound: float
    threshold: float
    verdict: str

    def to_dict(self) -> dict:
        return asdict(self)


def gram_cubed_bound(components: ComponentSet) -> float:
    """Gershgorin bound ``1 + max_i sum_{j!=i} |<a_i,a_j>|^3`` on ``||B B^T||``."""
    if components.m == 1:
        return 1.0
    g = components.gram()
    np.fill_diagonal(g, 0.0)
    return 1.0 + float(np.max(np.sum(np.abs(g) ** 3, axis=1)))


def max_coherence_sq(components: ComponentSet) -> float:
    if components.m == 1:
        return 0.0
    g = components.gram()
    np.fill_diagonal(g, 0.0)
    return min(float(np.max(g * g)), 1.0)


class CrossOperator:
    """Matrix-free ``y -> sum_{i!=j} w_ij <a_i,a_j> <a_i(x)a_j, y> (a_i(x)a_j)`` on R^{n^2}.

    ``w_ij = sigma_i tau_j`` (all ones by default).  Applying it costs
    ``O(m^2 n + m n^2)`` through ``<a_i(x)a_j, y> = a_i^T Y a_j`` with ``Y`` the
    row-major n x n reshape of ``y``.  Every weighted sum of the symmetric
    rank-one terms is symmetric, so the operator is its own adjoint.
    """

    def __init__(self, components: ComponentSet, sigma=None, tau=None):
        a = components.vectors
        m, n = a.shape
        w = components.gram()
        np.fill_diagonal(w, 0.0)
        if sigma is not None or tau is not None:
            sigma = np.ones(m) if sigma is None else np.asarray(sigma, dtype=float)
            tau = np.ones(m) if tau is None else np.asarray(tau, dtype=float)
            if sigma.shape != (m,) or tau.shape != (m,):
                raise ValueError(f"sign vectors must have length m = {m}")
            w = w * np.outer(sigma, tau)
        self.components = components
        self.weights = w
        self.n = n
        self.dim = n * n

    def __call__(self, y: np.ndarray) -> np.ndarray:
        a = self.components.vectors
        p = a @ y.reshape(self.n, self.n) @ a.T
        return (a.T @ (self.weights * p) @ a).ravel()

    def dense(self) -> np.ndarray:
        """Explicit n^2 x n^2 matrix (small n only)."""
        a = self.components.vectors
        m = a.shape[0]
        kr = np.einsum("ip,jq->ijpq", a, a).reshape(m * m, self.dim)
        return kr.T @ (self.weights.ravel()[:, None] * kr)

    def quadratic_form(self, y: np.ndarray) -> float:
        return float(y @ self(y))


def build_cross_operator(components: ComponentSet) -> CrossOperator:
    return CrossOperator(components)


def cross_term_norm(components: ComponentSet, tol: float = 1e-9, seed: int = 0,
                    method: str = "power", operator: CrossOperator | None = None) -> float:
    """Certified upper bound on ``||M||``: the spectral estimate inflated by ``1 + 2 tol``."""
    op = build_cross_operator(components) if operator is None else operator
    if not np.any(op.weights):
        return 0.0
    est = spectral_norm(op, op, op.dim, op.dim, tol=tol, seed=seed, method=method)
    if not est.converged:
        raise SpectralNonConvergence(est, "cross-term matrix")
    return est.certified(tol)


def certified_a_norm_sq(components: ComponentSet, tol: float = 1e-9, seed: int = 0) -> float:
    est = spectral_norm(*dense_operator(components.vectors), tol=tol, seed=seed)
    if not est.converged:
        raise SpectralNonConvergence(est, "component matrix")
    return est.certified(tol) ** 2


def s4_bound(gersh: float, max_coherence_sq: float, a_norm_sq: float) -> float:
    """Positive root of ``s^2 = gersh + sqrt(c) * alpha * s``.

    Bounds ``sup_{|x|=1} sum_i <a_i,x>^4`` given a bound ``gersh`` on
    ``||B B^T||``, ``c = max_{i!=j} <a_i,a_j>^2`` and ``alpha >= ||A||^2``.
    """
    if not gersh >= 1.0:
        raise ValueError(f"gersh bound must be >= 1, got {gersh}")
    if not 0.0 <= max_coherence_sq <= 1.0:
        raise ValueError(f"max_coherence_sq must lie in [0, 1], got {max_coherence_sq}")
    # certified estimates of ||A||^2 for unit rows can sit a few ulps below 1
    if not a_norm_sq >= 1.0 - 1e-9:
        raise ValueError(f"a_norm_sq must be >= 1 for unit-norm components, got {a_norm_sq}")
    beta = math.sqrt(max_coherence_sq) * a_norm_sq
    return (beta + math.sqrt(beta * beta + 4.0 * gersh)) / 2.0


def assemble_bound(s4: float, cross: float, noise: float) -> float:
    return math.sqrt(s4 + cross) + noise


def certify(tensor: SymmetricTensor3, threshold: float | None = None, tol: float = 1e-9,
            seed: int = 0, method: str = "power", threads: int = 1) -> CertificateReport:
    """Rigorous upper bound on ``sup_{|x|=1} T(x,x,x)`` for a component-form tensor.

    Verdict is YES when the bound is at most ``threshold`` (default
    ``1 + 1/ln n``).
    """
    if tensor.components is None:
        raise ComponentFormRequired()
    comp = tensor.components
    if threshold is None:
        threshold = default_threshold(tensor.n)

    gersh = gram_cubed_bound(comp)
    c = max_coherence_sq(comp)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=2) as pool:
            f_alpha = pool.submit(certified_a_norm_sq, comp, tol, seed)
            f_mu = pool.submit(cross_term_norm, comp, tol, seed, method)
            alpha, mu = f_alpha.result(), f_mu.result()
    else:
        alpha = certified_a_norm_sq(comp, tol, seed)
        mu = cross_term_norm(comp, tol, seed, method)
    s4 = s4_bound(gersh, c, alpha)
    nu = unfolding_norm(tensor.noise) if tensor.noise is not None else 0.0
    bound = assemble_bound(s4, mu, nu)
    return CertificateReport(
        gersh_bound=gersh, max_coherence_sq=c, a_norm_sq=alpha, cross_term_norm=mu,
        s4_bound=s4, noise_norm=nu, bound=bound, threshold=float(threshold),
        verdict="YES" if bound <= threshold else "NO",
    )


def p_value(components: ComponentSet, x: np.ndarray) -> float:
    """``p(x) = sum_{i!=j} <a_i,a_j> <a_i,x>^2 <a_j,x>^2`` by direct summation."""
    g = components.gram()
    np.fill_diagonal(g, 0.0)
    s = (components.vectors @ x) ** 2
    return float(s @ g @ s)
