"""Degree-d moment relaxation of ``max T(x,x,x)`` over the unit sphere.

A pseudo-expectation of degree d is a vector ``y`` of moments indexed by
monomials ``x^alpha`` with ``|alpha| <= d``.  It must satisfy ``y[0] = 1``,
the sphere-ideal equations ``E[(|x|^2 - 1) x^gamma] = 0`` for
``|gamma| <= d - 2`` and positive semidefiniteness of the moment matrix
``L(y)[alpha, beta] = y[alpha + beta]`` (``|alpha|, |beta| <= d/2``).

The relaxation is solved with ADMM on the splitting ``L(y) = Z``,
``Z`` PSD: the ``y``-step is an equality-constrained least-squares solve with
a factorization computed once, the ``Z``-step is an eigenvalue clip.
"""

from __future__ import annotations

import base64
import itertools
import json
import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .tensor import DENSE_CAP, SymmetricTensor3

log = logging.getLogger(__name__)

MATRIX_SIDE_CAP = 500


class ProblemTooLarge(ValueError):
    pass


class MonomialBasis:
    """Graded-lexicographic monomials in ``n`` variables up to degree ``d``.

    ``half`` lists exponents of degree ``<= d/2`` (moment-matrix index);
    ``full`` lists exponents of degree ``<= d`` (moment-vector index).
    Within a degree, exponents are ordered lexicographically from the
    largest power of ``x_1`` down.
    """

    def __init__(self, n: int, degree: int):
        if n < 1:
            raise ValueError("n must be positive")
        if degree < 0 or degree % 2:
            raise ValueError(f"degree must be a non-negative even integer, got {degree}")
        self.n = n
        self.degree = degree
        self.half = self._monomials(n, degree // 2)
        self.full = self._monomials(n, degree)
        self.index = {alpha: k for k, alpha in enumerate(self.full)}
        assert len(self.half) == comb(n + degree // 2, degree // 2)
        assert len(self.full) == comb(n + degree, degree)

    @staticmethod
    def _monomials(n: int, top: int) -> list[tuple[int, ...]]:
        out = []
        for deg in range(top + 1):
            for combo in itertools.combinations_with_replacement(range(n), deg):
                alpha = [0] * n
                for v in combo:
                    alpha[v] += 1
                out.append(tuple(alpha))
        return out

    @property
    def matrix_side(self) -> int:
        return len(self.half)

    @property
    def size(self) -> int:
        return len(self.full)

    def add(self, alpha, beta) -> int:
        return self.index[tuple(a + b for a, b in zip(alpha, beta))]

    def unit(self, i: int, times: int = 1) -> tuple[int, ...]:
        e = [0] * self.n
        e[i] = times
        return tuple(e)

    def moment_map(self) -> np.ndarray:
        """Integer array ``K`` with ``L(y) = y[K]``."""
        side = self.matrix_side
        k = np.empty((side, side), dtype=np.intp)
        for a, alpha in enumerate(self.half):
            for b, beta in enumerate(self.half):
                k[a, b] = self.add(alpha, beta)
        return k

    def point_moments(self, x) -> np.ndarray:
        """Moments of the point mass at ``x``: ``y[alpha] = x^alpha``."""
        x = np.asarray(x, dtype=float)
        return np.array([np.prod(x ** np.array(alpha)) for alpha in self.full])


@dataclass(frozen=True)
class Residuals:
    psd_violation: float
    ideal_residual: float
    normalization_residual: float

    def worst(self) -> float:
        return max(self.psd_violation, self.ideal_residual, self.normalization_residual)


@dataclass(eq=False)
class PseudoExpectation:
    basis: MonomialBasis
    moments: np.ndarray
    residuals: Residuals | None = None

    @property
    def degree(self) -> int:
        return self.basis.degree

    @property
    def moment_matrix(self) -> np.ndarray:
        return self.moments[self.basis.moment_map()]

    def __call__(self, alpha) -> float:
        return float(self.moments[self.basis.index[tuple(alpha)]])

    def to_json(self) -> str:
        header = {"kind": "pseudo-expectation", "n": self.basis.n, "degree": self.degree,
                  "residuals": None if self.residuals is None else vars(self.residuals)}
        blob = base64.b64encode(np.ascontiguousarray(self.moments, dtype="<f8").tobytes()).decode()
        return json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n" + blob + "\n"


@dataclass(frozen=True)
class SdpSolveReport:
    opt_value: float
    iterations: int
    primal_residual: float
    constraint_residual: float
    status: str  # converged | max_iter | infeasible-suspected


@dataclass(eq=False)
class CertificationProblem:
    """``maximize c^T y`` s.t. ``A_eq y = b_eq`` and ``y[K]`` PSD."""

    basis: MonomialBasis
    objective: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    constraint_labels: list = field(default_factory=list)

    @property
    def moment_index(self) -> np.ndarray:
        return self.basis.moment_map()

    def objective_value(self, moments: np.ndarray) -> float:
        return float(self.objective @ moments)

    def to_json(self) -> str:
        enc = lambda a: base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()
        header = {"kind": "moment-problem", "n": self.basis.n, "degree": self.basis.degree,
                  "constraints": len(self.b_eq), "moments": self.basis.size}
        return "\n".join([json.dumps(header, sort_keys=True, separators=(",", ":")),
                          enc(self.objective), enc(self.a_eq.ravel()), enc(self.b_eq)]) + "\n"


def sphere_ideal_rows(basis: MonomialBasis) -> tuple[np.ndarray, list]:
    """Rows of ``E[(|x|^2 - 1) x^gamma] = 0`` for every ``|gamma| <= d - 2``."""
    rows, labels = [], []
    for gamma in basis.full:
        if sum(gamma) > basis.degree - 2:
            break
        row = np.zeros(basis.size)
        for i in range(basis.n):
            row[basis.add(gamma, basis.unit(i, 2))] += 1.0
        row[basis.index[gamma]] -= 1.0
        rows.append(row)
        labels.append(("sphere", gamma))
    return np.array(rows).reshape(len(rows), basis.size), labels


def cubic_objective(dense: np.ndarray, basis: MonomialBasis) -> np.ndarray:
    """Coefficients ``c`` with ``c^T y = sum_{ijk} T_ijk y[e_i + e_j + e_k]``."""
    n = basis.n
    c = np.zeros(basis.size)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                alpha = [0] * n
                alpha[i] += 1
                alpha[j] += 1
                alpha[k] += 1
                c[basis.index[tuple(alpha)]] += dense[i, j, k]
    return c


def build_certification_problem(tensor: SymmetricTensor3, degree: int = 4,
                                side_cap: int = MATRIX_SIDE_CAP) -> CertificationProblem:
    if degree % 2:
        raise ValueError(f"moment relaxations need an even degree, got {degree}")
    if degree < 4:
        raise ValueError("the cubic objective needs degree >= 4")
    side = comb(tensor.n + degree // 2, degree // 2)
    if side > side_cap:
        raise ProblemTooLarge(f"moment matrix side {side} exceeds the cap {side_cap} "
                              f"(n={tensor.n}, degree={degree})")
    basis = MonomialBasis(tensor.n, degree)
    ideal, labels = sphere_ideal_rows(basis)
    norm_row = np.zeros((1, basis.size))
    norm_row[0, 0] = 1.0
    a_eq = np.vstack([norm_row, ideal])
    b_eq = np.zeros(a_eq.shape[0])
    b_eq[0] = 1.0
    c = cubic_objective(tensor.densify(DENSE_CAP), basis)
    return CertificationProblem(basis, c, a_eq, b_eq, [("normalization", None)] + labels)


def _psd_project(s: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (s + s.T))
    return (v * np.maximum(w, 0.0)) @ v.T


def _residuals(basis: MonomialBasis, y: np.ndarray) -> Residuals:
    ideal, _ = sphere_ideal_rows(basis)
    lmin = float(np.linalg.eigvalsh(y[basis.moment_map()])[0])
    ideal_res = float(np.max(np.abs(ideal @ y), initial=0.0))
    return Residuals(psd_violation=max(-lmin, 0.0), ideal_residual=ideal_res,
                     normalization_residual=abs(float(y[0]) - 1.0))


def solve(problem: CertificationProblem, tol: float = 1e-7, max_iter: int = 50000,
          rho: float = 1.0) -> tuple[PseudoExpectation, SdpSolveReport]:
    """ADMM for ``max c^T y`` s.t. ``A_eq y = b_eq``, ``L(y) = Z``, ``Z`` PSD.

    Stops when the splitting gap ``||L(y) - Z||_F`` and the dual change
    ``rho ||L^T(Z_k - Z_{k-1})||`` are both below ``tol`` (the equality
    constraints are satisfied exactly by every ``y``-step).
    """
    basis = problem.basis
    kmap = problem.moment_index
    side = kmap.shape[0]
    size = basis.size
    flat = kmap.ravel()
    counts = np.bincount(flat, minlength=size).astype(float)

    def adjoint(mat):
        return np.bincount(flat, weights=mat.ravel(), minlength=size)

    a_eq, b_eq, c = problem.a_eq, problem.b_eq, problem.objective
    p = a_eq.shape[0]
    kkt = np.zeros((size + p, size + p))
    kkt[:size, :size] = np.diag(rho * counts)
    kkt[:size, size:] = a_eq.T
    kkt[size:, :size] = a_eq
    # ideal rows can be dependent for some (n, d); lstsq-grade pseudo-inverse keeps the step defined
    kkt_inv = np.linalg.pinv(kkt, rcond=1e-12)

    z = np.zeros((side, side))
    u = np.zeros((side, side))
    y = np.zeros(size)
    status = "max_iter"
    r_norm = s_norm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        rhs = np.concatenate([rho * adjoint(z - u) + c, b_eq])
        y = (kkt_inv @ rhs)[:size]
        ly = y[kmap]
        z_old = z
        z = _psd_project(ly + u)
        u = u + ly - z
        r_norm = float(np.linalg.norm(ly - z))
        s_norm = rho * float(np.linalg.norm(adjoint(z - z_old)))
        if r_norm <= tol and s_norm <= tol:
            status = "converged"
            break
        if not np.isfinite(r_norm) or np.linalg.norm(y) > 1e8:
            status = "infeasible-suspected"
            break
    constraint_res = float(np.max(np.abs(a_eq @ y - b_eq), initial=0.0))
    res = _residuals(basis, y)
    pe = PseudoExpectation(basis, y, res)
    report = SdpSolveReport(opt_value=float(c @ y), iterations=it, primal_residual=r_norm,
                            constraint_residual=constraint_res, status=status)
    log.debug("moment SDP n=%d d=%d: %s", basis.n, basis.degree, report)
    return pe, report


@dataclass(frozen=True)
class SdpVerdict:
    verdict: str  # YES | NO | UNDECIDED
    threshold: float
    report: SdpSolveReport
    warning: str | None = None


def certify_via_sdp(tensor: SymmetricTensor3, threshold: float | None = None, degree: int = 4,
                    tol: float = 1e-7, max_iter: int = 50000) -> SdpVerdict:
    """YES iff the relaxation value is at most ``threshold + tol``.

    NO is always correct: point masses are feasible, so the value is at
    least the injective norm.  A solve that does not converge yields
    UNDECIDED.
    """
    if threshold is None:
        from .certificate import default_threshold
        threshold = default_threshold(tensor.n)
    problem = build_certification_problem(tensor, degree)
    _, report = solve(problem, tol=tol, max_iter=max_iter)
    if report.status != "converged":
        return SdpVerdict("UNDECIDED", threshold, report, f"solver status {report.status}")
    opt = report.opt_value
    warning = None
    if abs(opt - threshold) <= tol:
        warning = f"relaxation value {opt:.9g} is within tol of the threshold {threshold:.9g}"
    verdict = "YES" if opt <= threshold + tol else "NO"
    return SdpVerdict(verdict, threshold, report, warning)


def validate_pseudo_expectation(pe: PseudoExpectation, tol: float = 1e-8) -> tuple[Residuals, bool]:
    """Recompute the three residuals from the moments; valid when all are ``<= tol``."""
    res = _residuals(pe.basis, np.asarray(pe.moments, dtype=float))
    return res, res.worst() <= tol


def mixture_moments(basis: MonomialBasis, points, weights=None) -> np.ndarray:
    points = np.atleast_2d(points)
    if weights is None:
        weights = np.full(len(points), 1.0 / len(points))
    return sum(w * basis.point_moments(x) for w, x in zip(weights, points))

