"""Random instances: component ensembles, calibrated noise, incoherence statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import rademacher, stream, unit_vectors
from .spectral import SpectralNonConvergence, dense_operator, spectral_norm
from .tensor import (DENSE_CAP, ENSEMBLES, ComponentSet, SymmetricTensor3, from_components,
                     symmetrize, unfolding_norm, with_noise)

_MODULE = "random-instances"


def certification_noise_budget(n: int) -> float:
    """Unfolding-norm budget ``1 / (2 ln n)`` under which certification still succeeds."""
    return 1.0 / (2.0 * math.log(n))


def decomposition_noise_budget(n: int) -> float:
    """Unfolding-norm budget ``1 / (10 ln n)`` for decomposition."""
    return 1.0 / (10.0 * math.log(n))


@dataclass(frozen=True)
class NoiseSpec:
    target_unfolding_norm: float
    seed: int = 0
    shape: str = "symmetric-gaussian"

    def __post_init__(self):
        if not self.target_unfolding_norm >= 0:
            raise ValueError("target_unfolding_norm must be non-negative")
        if self.shape != "symmetric-gaussian":
            raise ValueError(f"unknown noise shape {self.shape!r}")


@dataclass(frozen=True, eq=False)
class InstanceStats:
    max_coherence: float
    a_norm_sq: float
    gersh_row_sums: np.ndarray


def sample_components(n: int, m: int, ensemble: str = "rademacher-normalized", seed: int = 0) -> ComponentSet:
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    if ensemble not in ENSEMBLES:
        raise ValueError(f"unknown ensemble {ensemble!r}; choose from {ENSEMBLES}")
    rng = stream(seed, _MODULE, "components/" + ensemble)
    if ensemble == "rademacher-normalized":
        a = rademacher(rng, (m, n)) / math.sqrt(n)
    else:
        # sphere-uniform and gaussian-normalized coincide in law; they use separate streams
        a = unit_vectors(rng, m, n)
    return ComponentSet(a, ensemble=ensemble, seed=seed)


def sample_instance(n: int, m: int, ensemble: str = "rademacher-normalized",
                    seed: int = 0) -> tuple[ComponentSet, SymmetricTensor3]:
    comp = sample_components(n, m, ensemble, seed)
    return comp, from_components(comp)


def orthonormal_components(n: int, m: int | None = None, seed: int | None = None) -> ComponentSet:
    """The first ``m`` standard basis vectors, or a seeded random orthonormal frame."""
    m = n if m is None else m
    if m > n:
        raise ValueError("an orthonormal set in R^n has at most n vectors")
    if seed is None:
        return ComponentSet(np.eye(n)[:m])
    q, r = np.linalg.qr(stream(seed, _MODULE, "orthonormal").standard_normal((n, n)))
    q = q * np.sign(np.diag(r))
    q = q[:, :m].T
    # re-normalize rows so the unit-norm invariant holds to round-off
    return ComponentSet(q / np.linalg.norm(q, axis=1, keepdims=True))


def noise_tensor(n: int, spec: NoiseSpec) -> np.ndarray:
    """Symmetrized Gaussian tensor rescaled to the target unfolding norm."""
    if spec.target_unfolding_norm == 0:
        return np.zeros((n, n, n))
    g = stream(spec.seed, _MODULE, "noise").standard_normal((n, n, n))
    e = symmetrize(g)
    return e * (spec.target_unfolding_norm / unfolding_norm(e))


def add_noise(tensor: SymmetricTensor3, spec: NoiseSpec, cap: int = DENSE_CAP) -> SymmetricTensor3:
    """``T + E`` with ``E`` symmetric and ``||unfold(E)|| = spec.target_unfolding_norm``."""
    if spec.target_unfolding_norm == 0:
        return tensor
    if tensor.n > cap:
        from .tensor import DensificationError
        raise DensificationError(f"dense noise for n={tensor.n} exceeds the cap {cap}")
    e = noise_tensor(tensor.n, spec)
    return with_noise(tensor, e, noise_norm=spec.target_unfolding_norm)


def instance_stats(components: ComponentSet, tol: float = 1e-9, seed: int = 0) -> InstanceStats:
    g = components.gram()
    off = np.abs(g - np.diag(np.diag(g)))
    max_coh = float(off.max()) if components.m > 1 else 0.0
    rows = np.sum(off**3, axis=1)
    est = spectral_norm(*dense_operator(components.vectors), tol=tol, seed=seed)
    if not est.converged:
        raise SpectralNonConvergence(est, "component matrix")
    return InstanceStats(max_coherence=min(max_coh, 1.0), a_norm_sq=est.value**2, gersh_row_sums=rows)
