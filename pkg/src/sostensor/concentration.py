"""Monte Carlo checks of the concentration steps behind the cross-term bound."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .certificate import CrossOperator, cross_term_norm, gram_cubed_bound
from .decomposition import ascend_batch
from .instances import sample_components
from .rng import child_seed, rademacher, stream, unit_vectors
from .spectral import SpectralNonConvergence, dense_operator, spectral_norm
from .tensor import ComponentSet, from_components, kronecker

_MODULE = "concentration-lab"
DENSE_SIDE_CAP = 625


class HypothesisViolation(ValueError):
    """Inputs do not satisfy the hypothesis of the claim being checked."""


def build_signed_cross_operator(components: ComponentSet, sigma, tau) -> CrossOperator:
    """``sum_{i!=j} sigma_i tau_j <a_i,a_j> (a_i(x)a_j)(a_i(x)a_j)^T`` (``tau = sigma`` couples)."""
    return CrossOperator(components, sigma=sigma, tau=tau)


def _op_norm(op: CrossOperator, tol: float, seed: int) -> float:
    if not np.any(op.weights):
        return 0.0
    est = spectral_norm(op, op, op.dim, op.dim, tol=tol, seed=seed, verify_adjoint=False)
    if not est.converged:
        raise SpectralNonConvergence(est, "signed cross operator")
    return est.value


def _map(fn, items, threads: int):
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=None if threads <= 0 else threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- decoupling


@dataclass(frozen=True)
class DecoupledSample:
    sigma: np.ndarray
    tau: np.ndarray
    norm_coupled: float
    norm_decoupled: float


@dataclass
class DecouplingSummary:
    samples: list
    ratios: dict  # quantile -> quantile(|M'|) / quantile(|M''|)

    @property
    def median_ratio(self) -> float:
        return self.ratios[0.5]


def quantile_ratio(coupled, decoupled, q: float) -> float:
    a = float(np.quantile(coupled, q))
    b = float(np.quantile(decoupled, q))
    if a == 0.0 and b == 0.0:
        return 1.0
    return a / b if b > 0 else math.inf


def decoupling_experiment(n: int, m: int, trials: int = 200, seed: int = 0,
                          components: ComponentSet | None = None, ensemble: str = "rademacher-normalized",
                          tol: float = 1e-6, threads: int = 1) -> DecouplingSummary:
    """Norms of ``M' = sum sigma_i sigma_j Q_ij`` and ``M'' = sum sigma_i tau_j Q_ij``.

    Components are drawn once and held fixed; each trial draws fresh signs.
    """
    if trials < 30:
        raise ValueError("the decoupling experiment needs at least 30 trials")
    if components is None:
        components = sample_components(n, m, ensemble, child_seed(seed, _MODULE, "decouple-components"))
    m = components.m

    def trial(t: int) -> DecoupledSample:
        rng = stream(seed, _MODULE, "decouple-signs", t)
        sigma = rademacher(rng, m)
        tau = rademacher(rng, m)
        s = child_seed(seed, _MODULE, "decouple-norm", t)
        coupled = _op_norm(build_signed_cross_operator(components, sigma, sigma), tol, s)
        decoupled = _op_norm(build_signed_cross_operator(components, sigma, tau), tol, s)
        return DecoupledSample(sigma, tau, coupled, decoupled)

    samples = _map(trial, range(trials), threads)
    c = [s.norm_coupled for s in samples]
    d = [s.norm_decoupled for s in samples]
    return DecouplingSummary(samples, {q: quantile_ratio(c, d, q) for q in (0.5, 0.9)})


def symmetrization_check(n: int, m: int, trials: int = 200, seed: int = 0,
                         tol: float = 1e-6, threads: int = 1) -> tuple[float, float]:
    """Medians of ``|M'|`` over fresh signs (fixed components) and of ``|M|`` over fresh components."""
    fixed = sample_components(n, m, "rademacher-normalized", child_seed(seed, _MODULE, "sym-fixed"))

    def signed(t):
        sigma = rademacher(stream(seed, _MODULE, "sym-signs", t), m)
        return _op_norm(build_signed_cross_operator(fixed, sigma, sigma), tol,
                        child_seed(seed, _MODULE, "sym-norm", t))

    def fresh(t):
        comp = sample_components(n, m, "rademacher-normalized", child_seed(seed, _MODULE, "sym-fresh", t))
        return _op_norm(CrossOperator(comp), tol, child_seed(seed, _MODULE, "sym-norm", t))

    a = _map(signed, range(trials), threads)
    b = _map(fresh, range(trials), threads)
    return float(np.median(a)), float(np.median(b))


# ---------------------------------------------------------------- Bernstein


def bernstein_tail(d: int, R: float, sigma_sq: float, t: float) -> float:
    """``min(1, d * exp(-(t^2/2) / (sigma^2 + R t / 3)))``."""
    if d < 1 or not R > 0 or sigma_sq < 0 or t < 0:
        raise ValueError("need d >= 1, R > 0, sigma_sq >= 0, t >= 0")
    if t == 0:
        return 1.0
    return min(1.0, d * math.exp(-(t * t / 2.0) / (sigma_sq + R * t / 3.0)))


@dataclass(frozen=True)
class MatrixFamily:
    """Fixed symmetric summands ``X_k``; the random sum is ``sum_k eps_k X_k`` with Rademacher ``eps``."""

    summands: np.ndarray  # (K, d, d)
    label: str = ""

    @property
    def dim(self) -> int:
        return self.summands.shape[1]

    @property
    def R(self) -> float:
        return float(max(np.linalg.norm(x, 2) for x in self.summands))

    @property
    def variance(self) -> float:
        """``|| sum_k E[(eps_k X_k)^2] || = || sum_k X_k^2 ||``."""
        s = np.einsum("kij,kjl->il", self.summands, self.summands)
        return float(np.linalg.norm(s, 2))


def row_family(components: ComponentSet, i: int) -> MatrixFamily:
    """Summands ``<a_i,a_j> a_j a_j^T`` for ``j != i``."""
    a = components.vectors
    g = a @ a[i]
    js = [j for j in range(components.m) if j != i]
    summands = np.array([g[j] * np.outer(a[j], a[j]) for j in js]).reshape(len(js), components.n, components.n)
    return MatrixFamily(summands, f"row i={i}")


def row_family_variance(components: ComponentSet, i: int) -> float:
    """``|| A^T diag(<a_i,a_j>^2)_{j != i} A ||`` (rows of ``A`` are the components)."""
    a = components.vectors
    w = (a @ a[i]) ** 2
    w[i] = 0.0
    return float(np.linalg.norm(a.T @ (w[:, None] * a), 2))


def t_matrix(components: ComponentSet, tau, i: int) -> np.ndarray:
    """Dense ``T_i = sum_{j != i} tau_j Q_ij``, ``Q_ij = <a_i,a_j> (a_i(x)a_j)(a_i(x)a_j)^T``."""
    a = components.vectors
    n = components.n
    if n * n > DENSE_SIDE_CAP:
        raise ValueError(f"dense n^2 x n^2 work is capped at side {DENSE_SIDE_CAP}")
    out = np.zeros((n * n, n * n))
    for j in range(components.m):
        if j == i:
            continue
        v = np.kron(a[i], a[j])
        out += tau[j] * float(a[i] @ a[j]) * np.outer(v, v)
    return out


def t_right_factor(components: ComponentSet, tau, i: int) -> np.ndarray:
    """``sum_{j != i} tau_j <a_i,a_j> a_j a_j^T``, the right Kronecker factor of ``T_i``."""
    a = components.vectors
    w = np.asarray(tau, dtype=float) * (a @ a[i])
    w[i] = 0.0
    return a.T @ (w[:, None] * a)


def t_family(components: ComponentSet, tau) -> MatrixFamily:
    return MatrixFamily(np.array([t_matrix(components, tau, i) for i in range(components.m)]), "T_i")


@dataclass
class BernsteinRow:
    t: float
    empirical: float
    bound: float

    @property
    def violated(self) -> bool:
        return self.empirical > self.bound


def bernstein_empirical_check(family: MatrixFamily, trials: int = 2000, t_grid=None,
                              seed: int = 0, grid_points: int = 20) -> list:
    """Empirical ``Pr[|sum eps_k X_k| >= t]`` against the matrix Bernstein tail.

    The default grid spans ``[0, 1.2 max observed norm]``.
    """
    rng = stream(seed, _MODULE, "bernstein-signs")
    k = family.summands.shape[0]
    flat = family.summands.reshape(k, -1)
    d = family.dim
    norms = np.empty(trials)
    for t in range(trials):
        eps = rademacher(rng, k)
        s = (eps @ flat).reshape(d, d)
        w = np.linalg.eigvalsh(0.5 * (s + s.T))
        norms[t] = max(abs(w[0]), abs(w[-1]))
    if t_grid is None:
        t_grid = np.linspace(0.0, 1.2 * norms.max(), grid_points)
    R, var = family.R, family.variance
    if R == 0:
        return [BernsteinRow(float(t), float(np.mean(norms >= t)), 1.0 if t == 0 else 0.0) for t in t_grid]
    return [BernsteinRow(float(t), float(np.mean(norms >= t)), bernstein_tail(d, R, var, float(t)))
            for t in t_grid]


# ------------------------------------------------ Kronecker-PSD and T_i claims


def _min_eig(mat: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (mat + mat.T))[0])


def t_i_domination_check(components: ComponentSet, tau, i: int,
                         bound_coefficient: float | None = None) -> tuple[bool, float]:
    """Check ``T_i <= coef * (a_i a_i^T) (x) I`` densely; returns ``(holds, min eigenvalue margin)``.

    ``coef`` defaults to the measured norm of the right Kronecker factor.
    """
    if components.n > 25:
        raise ValueError("dense T_i checks are capped at n <= 25")
    tau = np.asarray(tau, dtype=float)
    if bound_coefficient is None:
        bound_coefficient = float(np.linalg.norm(t_right_factor(components, tau, i), 2))
    a_i = components.vectors[i]
    lhs = bound_coefficient * kronecker(np.outer(a_i, a_i), np.eye(components.n))
    margin = _min_eig(lhs - t_matrix(components, tau, i))
    return margin >= -1e-10, margin


def kronecker_psd_check(p: np.ndarray, q: np.ndarray, r: np.ndarray, probes: int = 100,
                        seed: int = 0, tol: float = 1e-10) -> bool:
    """``P <= Q`` and ``R >= 0`` imply ``R (x) P <= R (x) Q``; probes plus a dense eigencheck."""
    p, q, r = (np.asarray(x, dtype=float) for x in (p, q, r))
    if _min_eig(q - p) < -tol:
        raise HypothesisViolation("P <= Q does not hold")
    if _min_eig(r) < -tol:
        raise HypothesisViolation("R is not positive semidefinite")
    diff = kronecker(r, q - p)
    ys = stream(seed, _MODULE, "kron-probes").standard_normal((probes, diff.shape[0]))
    quad = np.einsum("bi,ij,bj->b", ys, diff, ys)
    scale = np.maximum(1.0, np.sum(ys * ys, axis=1))
    probes_ok = bool(np.all(quad >= -tol * scale))
    return probes_ok and _min_eig(diff) >= -tol


# ---------------------------------------------------------------- scaling


METRICS = ("cross_term_norm", "gersh_excess", "a_norm_sq", "injective_estimate")


@dataclass(frozen=True)
class SlopeFit:
    kind: str  # cross-vs-m | cross-vs-n | gersh-vs-m
    fixed: int | None
    slope: float
    halfwidth: float
    points: int


@dataclass
class ScalingRun:
    grid: list
    trials_per_cell: int
    seed: int
    rows: list  # one dict per (cell, trial)
    cells: dict  # (n, m) -> metric -> {"median", "q1", "q3"}
    slopes: list = field(default_factory=list)

    def slope(self, kind: str, fixed: int | None = None) -> SlopeFit | None:
        for s in self.slopes:
            if s.kind == kind and (fixed is None or s.fixed == fixed):
                return s
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["n", "m", "trial", *METRICS], lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "grid": [list(c) for c in self.grid],
            "trials_per_cell": self.trials_per_cell,
            "seed": self.seed,
            "cells": [{"n": n, "m": m, **stats_} for (n, m), stats_ in self.cells.items()],
            "slopes": [asdict(s) for s in self.slopes],
        }


def fit_slope(xs, ys) -> tuple[float, float]:
    """Least-squares slope of ``log y`` on ``log x`` with a 95% confidence half-width."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    fit = stats.linregress(lx, ly)
    dof = len(lx) - 2
    half = float(stats.t.ppf(0.975, dof) * fit.stderr) if dof > 0 else math.inf
    return float(fit.slope), half


def _ascent_injective(tensor, seed: int, restarts: int = 16, steps: int = 300) -> float:
    starts = unit_vectors(stream(seed, _MODULE, "scaling-ascent"), restarts, tensor.n)
    _, values = ascend_batch(tensor, starts, steps, 1e-10)
    return float(np.nanmax(values))


def scaling_experiment(grid, trials: int = 10, seed: int = 0, tol: float = 1e-6,
                       ensemble: str = "rademacher-normalized", threads: int = 1,
                       ascent_restarts: int = 16) -> ScalingRun:
    """Per-cell spectral statistics and log-log slope fits.

    Slopes: cross-term norm against ``m`` for every ``n`` with >= 3 distinct
    ``m``; cross-term norm against ``n`` over cells with ``m = n``; and the
    Gershgorin excess against ``m`` for every such ``n``.
    """
    grid = [tuple(int(v) for v in c) for c in grid]
    jobs = [(c, t) for c in grid for t in range(trials)]

    def run(job):
        (n, m), t = job
        s = child_seed(seed, _MODULE, f"scaling/{n}/{m}", t)
        comp = sample_components(n, m, ensemble, s)
        est = spectral_norm(*dense_operator(comp.vectors), tol=tol, seed=s)
        return {
            "n": n, "m": m, "trial": t,
            "cross_term_norm": cross_term_norm(comp, tol=tol, seed=s),
            "gersh_excess": gram_cubed_bound(comp) - 1.0,
            "a_norm_sq": est.value**2,
            "injective_estimate": _ascent_injective(from_components(comp), s, ascent_restarts),
        }

    rows = _map(run, jobs, threads)
    cells = {}
    for c in grid:
        cell_rows = [r for r in rows if (r["n"], r["m"]) == c]
        cells[c] = {}
        for metric in METRICS:
            v = np.array([r[metric] for r in cell_rows])
            q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
            cells[c][metric] = {"median": float(med), "q1": float(q1), "q3": float(q3)}

    slopes = []
    for n in sorted({c[0] for c in grid}):
        ms = sorted({c[1] for c in grid if c[0] == n})
        if len(ms) >= 3:
            for kind, metric in (("cross-vs-m", "cross_term_norm"), ("gersh-vs-m", "gersh_excess")):
                ys = [cells[(n, m)][metric]["median"] for m in ms]
                if min(ys) > 0:
                    slope, half = fit_slope(ms, ys)
                    slopes.append(SlopeFit(kind, n, slope, half, len(ms)))
    diag = sorted(c[0] for c in grid if c[0] == c[1])
    if len(diag) >= 3:
        ys = [cells[(n, n)]["cross_term_norm"]["median"] for n in diag]
        if min(ys) > 0:
            slope, half = fit_slope(diag, ys)
            slopes.append(SlopeFit("cross-vs-n", None, slope, half, len(diag)))
    return ScalingRun(grid, trials, seed, rows, cells, slopes)
