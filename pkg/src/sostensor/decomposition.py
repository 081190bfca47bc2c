"""Component recovery: extraction with deflation, refinement, matching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .rng import stream, unit_vectors
from .tensor import (ComponentSet, SymmetricTensor3, contract, contract_rows, eval_cubic,
                     eval_cubic_rows, frobenius_distance_to, unfold)

_MODULE = "decomposition"
VANISH = 1e-14


class VanishingContraction(ArithmeticError):
    """``T(., x, x)`` is numerically zero at the current point; restart elsewhere."""


class ExtractionStall(RuntimeError):
    def __init__(self, partial: np.ndarray, index: int, telemetry: list):
        super().__init__(f"no acceptable candidate for component {index} after exhausting restarts")
        self.partial = partial
        self.index = index
        self.telemetry = telemetry


@dataclass(frozen=True)
class ExtractionConfig:
    accept_threshold: float = 0.99
    deflation_threshold_sq: float = 1.0 / 8.0
    restarts_per_component: int = 200
    ascent_steps: int = 500
    ascent_tol: float = 1e-10
    seed: int = 0
    start_mode: str = "sphere"  # sphere | slices
    batch: int = 50

    def __post_init__(self):
        if not 0.0 < self.accept_threshold <= 1.0:
            raise ValueError("accept_threshold must lie in (0, 1]")
        if not 0.0 < self.deflation_threshold_sq < 1.0:
            raise ValueError("deflation_threshold_sq must lie in (0, 1)")
        if self.start_mode not in ("sphere", "slices"):
            raise ValueError(f"unknown start_mode {self.start_mode!r}")
        if self.restarts_per_component < 1 or self.batch < 1:
            raise ValueError("restart budget and batch size must be positive")


@dataclass
class ComponentTelemetry:
    restarts: int
    value: float


@dataclass
class Extraction:
    candidates: np.ndarray
    telemetry: list


@dataclass
class RefineResult:
    components: np.ndarray
    sweeps: int
    max_movement: float
    residual_history: list
    diverged: bool = False


@dataclass(eq=False)
class DecompositionResult:
    components: np.ndarray
    residual_fro: float
    telemetry: list
    matching: np.ndarray | None = None
    distances: np.ndarray | None = None
    refine_sweeps: int = 0
    refine_diverged: bool = False
    extracted_distances: np.ndarray | None = None

    def to_dict(self) -> dict:
        out = {
            "components": self.components.tolist(),
            "residual_fro": self.residual_fro,
            "refine_sweeps": self.refine_sweeps,
            "refine_diverged": self.refine_diverged,
            "telemetry": [vars(t) for t in self.telemetry],
        }
        if self.matching is not None:
            out["matching"] = self.matching.tolist()
            out["distances"] = self.distances.tolist()
            out["max_distance"] = float(np.max(self.distances))
        if self.extracted_distances is not None:
            out["extracted_distances"] = self.extracted_distances.tolist()
            out["extracted_max_distance"] = float(np.max(self.extracted_distances))
        return out


@dataclass(frozen=True)
class HolderDiagnostic:
    k: int
    best_component_index: int
    correlation_power: float
    passes: bool


def ascend(tensor: SymmetricTensor3, x0, steps: int = 500, tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Iterate ``x <- T(., x, x) / |T(., x, x)|`` from the unit vector ``x0``.

    Stops when successive iterates are within ``tol`` or after ``steps``.
    Raises :class:`VanishingContraction` when the contraction drops below 1e-14.
    """
    x = np.asarray(x0, dtype=float)
    if abs(np.linalg.norm(x) - 1.0) > 1e-9:
        raise ValueError("ascent needs a unit start vector")
    for _ in range(steps):
        v = contract(tensor, x)
        nv = np.linalg.norm(v)
        if nv < VANISH:
            raise VanishingContraction(f"|T(., x, x)| = {nv:.3e}")
        y = v / nv
        done = np.linalg.norm(y - x) <= tol
        x = y
        if done:
            break
    return x, eval_cubic(tensor, x)


def ascend_batch(tensor: SymmetricTensor3, starts: np.ndarray, steps: int, tol: float):
    """Run :func:`ascend` on every row of ``starts``; vanished rows come back as NaN."""
    x = np.array(starts, dtype=float)
    active = np.ones(len(x), dtype=bool)
    dead = np.zeros(len(x), dtype=bool)
    for _ in range(steps):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        v = contract_rows(tensor, x[idx])
        nv = np.linalg.norm(v, axis=1)
        gone = nv < VANISH
        dead[idx[gone]] = True
        active[idx[gone]] = False
        keep = ~gone
        idx, v, nv = idx[keep], v[keep], nv[keep]
        y = v / nv[:, None]
        moved = np.linalg.norm(y - x[idx], axis=1)
        x[idx] = y
        active[idx[moved <= tol]] = False
    values = eval_cubic_rows(tensor, x)
    x[dead] = np.nan
    values[dead] = np.nan
    return x, values


def _starts(tensor: SymmetricTensor3, count: int, config: ExtractionConfig, rng) -> np.ndarray:
    if config.start_mode == "sphere":
        return unit_vectors(rng, count, tensor.n)
    # top left singular vectors of random slices T(., ., g) = unfold(T) (I (x) g)
    n = tensor.n
    u = unfold(tensor)
    out = np.empty((count, n))
    for b in range(count):
        g = rng.standard_normal(n)
        slice_ = (u.reshape(n, n, n) @ g)
        w, v = np.linalg.eigh(0.5 * (slice_ + slice_.T))
        top = v[:, np.argmax(np.abs(w))]
        out[b] = top * (1.0 if rng.random() < 0.5 else -1.0)
    return out


def extract_components(tensor: SymmetricTensor3, m: int, config: ExtractionConfig | None = None) -> Extraction:
    """Find ``m`` candidates by multi-start ascent with deflation.

    A candidate ``c`` is accepted when ``T(c,c,c) >= accept_threshold`` and
    ``<s,c>^2 <= deflation_threshold_sq`` for every previously accepted ``s``.
    Restarts run in batches; the acceptable candidate with the largest value
    in the first batch containing one is taken.
    """
    config = config or ExtractionConfig()
    if m < 1:
        raise ValueError("m must be positive")
    found: list[np.ndarray] = []
    telemetry: list[ComponentTelemetry] = []
    for index in range(m):
        rng = stream(config.seed, _MODULE, "extract-starts", index)
        used = 0
        chosen = None
        while used < config.restarts_per_component and chosen is None:
            count = min(config.batch, config.restarts_per_component - used)
            xs, values = ascend_batch(tensor, _starts(tensor, count, config, rng),
                                      config.ascent_steps, config.ascent_tol)
            used += count
            ok = np.isfinite(values) & (values >= config.accept_threshold)
            if found and ok.any():
                s = np.array(found)
                ok &= np.all((xs @ s.T) ** 2 <= config.deflation_threshold_sq, axis=1)
            if ok.any():
                best = np.flatnonzero(ok)[np.argmax(values[ok])]
                chosen = (xs[best], float(values[best]))
        if chosen is None:
            telemetry.append(ComponentTelemetry(used, float("nan")))
            raise ExtractionStall(np.array(found).reshape(len(found), tensor.n), index, telemetry)
        found.append(chosen[0])
        telemetry.append(ComponentTelemetry(used, chosen[1]))
    return Extraction(np.array(found), telemetry)


def _sweep(tensor: SymmetricTensor3, b: np.ndarray) -> np.ndarray:
    b = b.copy()
    for i in range(len(b)):
        x = b[i]
        r = contract(tensor, x) - b.T @ ((b @ x) ** 2) + (x @ x) ** 2 * x
        nr = np.linalg.norm(r)
        if nr >= VANISH:
            b[i] = r / nr
    return b


def refine(tensor: SymmetricTensor3, initial: np.ndarray, sweeps: int = 100, tol: float = 1e-12,
           max_halvings: int = 20) -> RefineResult:
    """Cyclic single-component updates ``a_i <- r_i(a_i) / |r_i(a_i)|``.

    ``r_i(x) = T(., x, x) - sum_{j != i} <a_j, x>^2 a_j``.  A sweep that
    increases ``||T - sum a_i^3||_F`` is replaced by a step halved toward the
    previous iterate (renormalized rows) until the residual does not
    increase; if no halving helps the best iterate is returned with
    ``diverged=True``.
    """
    b = np.array(initial, dtype=float)
    if np.any(np.abs(np.linalg.norm(b, axis=1) - 1.0) > 1e-9):
        raise ValueError("refinement needs unit-norm initial rows")
    res = frobenius_distance_to(tensor, b)
    history = [res]
    movement = 0.0
    done = 0
    for done in range(1, sweeps + 1):
        proposal = _sweep(tensor, b)
        new_res = frobenius_distance_to(tensor, proposal)
        step = 1.0
        halvings = 0
        while new_res > res and halvings < max_halvings:
            step *= 0.5
            halvings += 1
            mix = b + step * (proposal - b)
            proposal = mix / np.linalg.norm(mix, axis=1, keepdims=True)
            new_res = frobenius_distance_to(tensor, proposal)
        if new_res > res:
            return RefineResult(b, done, movement, history, diverged=True)
        movement = float(np.max(np.linalg.norm(proposal - b, axis=1)))
        b, res = proposal, new_res
        history.append(res)
        if movement <= tol:
            break
    return RefineResult(b, done, movement, history)


def bottleneck_value(dist: np.ndarray) -> float:
    """Smallest ``t`` such that ``dist <= t`` contains a perfect matching."""
    values = np.unique(dist)
    lo, hi = 0, len(values) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        graph = csr_matrix(dist <= values[mid])
        if np.all(maximum_bipartite_matching(graph, perm_type="column") >= 0):
            hi = mid
        else:
            lo = mid + 1
    return float(values[lo])


def match_components(found: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Permutation ``pi`` minimizing ``max_i |found[pi[i]] - truth[i]|``.

    Among bottleneck-optimal permutations the one with the smallest total
    distance is returned.  No sign folding: ``-a`` is at distance 2 from ``a``.
    """
    found = np.asarray(found, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if found.shape != truth.shape:
        raise ValueError(f"shapes differ: {found.shape} vs {truth.shape}")
    dist = np.linalg.norm(truth[:, None, :] - found[None, :, :], axis=2)
    t = bottleneck_value(dist)
    cost = np.where(dist <= t, dist, np.inf)
    rows, cols = linear_sum_assignment(np.where(np.isfinite(cost), cost, 1e6 + dist))
    perm = np.empty(len(truth), dtype=int)
    perm[rows] = cols
    return perm, dist[np.arange(len(truth)), perm]


def brute_force_bottleneck(found: np.ndarray, truth: np.ndarray) -> float:
    dist = np.linalg.norm(truth[:, None, :] - found[None, :, :], axis=2)
    m = len(truth)
    return float(min(max(dist[i, p[i]] for i in range(m)) for p in permutations(range(m))))


def holder_diagnostic(candidate, truth: ComponentSet, k: int, eps: float, delta: float) -> HolderDiagnostic:
    """``max_i <a_i, c>^k`` against the amplification floor ``exp(-(2 eps + delta) k)``."""
    if k < 2 or k % 2:
        raise ValueError("k must be a positive even integer")
    c = np.asarray(candidate, dtype=float)
    powers = (truth.vectors @ c) ** k
    i = int(np.argmax(powers))
    value = float(min(powers[i], 1.0))
    return HolderDiagnostic(k, i, value, value >= math.exp(-(2.0 * eps + delta) * k))


def decompose(tensor: SymmetricTensor3, m: int, config: ExtractionConfig | None = None,
              sweeps: int = 100, refine_tol: float = 1e-12,
              truth: ComponentSet | None = None) -> DecompositionResult:
    extraction = extract_components(tensor, m, config)
    extracted = extraction.candidates
    refined = refine(tensor, extracted, sweeps=sweeps, tol=refine_tol)
    result = DecompositionResult(
        components=refined.components,
        residual_fro=refined.residual_history[-1],
        telemetry=extraction.telemetry,
        refine_sweeps=refined.sweeps,
        refine_diverged=refined.diverged,
    )
    if truth is not None:
        perm, dist = match_components(refined.components, truth.vectors)
        result.matching, result.distances = perm, dist
        _, result.extracted_distances = match_components(extracted, truth.vectors)
    return result
