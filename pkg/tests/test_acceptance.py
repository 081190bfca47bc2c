"""Acceptance criteria 1-11, one test each; every test prints a PASS/FAIL line.

Criteria 1-10 return a canonical JSON payload of everything they computed;
criterion 11 reruns them and compares the payloads byte for byte.
"""

import hashlib
import json
import time

import numpy as np
import pytest

from sostensor.certificate import certify
from sostensor.concentration import (bernstein_empirical_check, decoupling_experiment, kronecker_psd_check,
                                     row_family, scaling_experiment, t_family, t_i_domination_check,
                                     t_matrix, t_right_factor)
from sostensor.decomposition import ExtractionConfig, ExtractionStall, ascend_batch, decompose
from sostensor.instances import (NoiseSpec, add_noise, decomposition_noise_budget, orthonormal_components,
                                 sample_components, sample_instance)
from sostensor.moment_sdp import build_certification_problem, solve
from sostensor.rng import rademacher, stream, unit_vectors
from sostensor.tensor import from_components, from_dense, kronecker, symmetrize

PAYLOADS = {}


def _payload(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, default=lambda a: np.asarray(a).tolist()).encode()


def report(capsys, number, passed, detail):
    with capsys.disabled():
        print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'}: {detail}")


def best_ascent(tensor, restarts, seed, steps=1000):
    starts = unit_vectors(stream(seed, "acceptance", "ascent"), restarts, tensor.n)
    _, values = ascend_batch(tensor, starts, steps, 1e-12)
    return float(np.nanmax(values))


# ---------------------------------------------------------------- criteria


def criterion_1():
    t0 = time.perf_counter()
    bounds, dists = [], []
    for n in (5, 20, 50):
        comp = orthonormal_components(n, seed=n)
        t = from_components(comp)
        bounds.append(certify(t).bound)
        dists.append(float(np.max(decompose(t, n, ExtractionConfig(seed=n), truth=comp).distances)))
    elapsed = time.perf_counter() - t0
    ok = all(abs(b - 1) <= 1e-9 for b in bounds) and max(dists) <= 1e-8 and elapsed < 10
    detail = (f"bounds-1 = {[f'{b - 1:.1e}' for b in bounds]}, max recovery distance {max(dists):.1e}, "
              f"{elapsed:.1f}s")
    return ok, detail, {"bounds": bounds, "distances": dists}


def criterion_2():
    t0 = time.perf_counter()
    bounds = {m: [certify(sample_instance(200, m, seed=s)[1], seed=s).bound for s in range(10)]
              for m in (200, 400)}
    elapsed = time.perf_counter() - t0
    med = {m: float(np.median(b)) for m, b in bounds.items()}
    worst = max(max(b) for b in bounds.values())
    ok = worst <= 1.8 and med[400] > med[200] and elapsed < 300
    detail = f"max bound {worst:.4f} (<= 1.8), medians {med[200]:.4f} < {med[400]:.4f}, {elapsed:.0f}s"
    return ok, detail, {"bounds": bounds}


def criterion_3():
    rows = []
    for n in (20, 50, 100):
        for k, m in enumerate(np.unique(np.round(np.geomspace(n // 2, 2 * n**1.4, 10)).astype(int))):
            seed = 1000 * n + k
            _, t = sample_instance(n, int(m), seed=seed)
            rows.append((n, int(m), certify(t, seed=seed).bound, best_ascent(t, 50, seed)))
    violations = [r for r in rows if r[2] < r[3] - 1e-8]
    ok = len(rows) == 30 and not violations
    gap = min(r[2] - r[3] for r in rows)
    return ok, f"{len(rows)} instances, {len(violations)} violations, min(bound - ascent) = {gap:.4f}", rows


def _recovery(noise: float):
    runs, lines = [], []
    for seed in range(3):
        t0 = time.perf_counter()
        comp, t = sample_instance(50, 100, seed=seed)
        if noise:
            t = add_noise(t, NoiseSpec(noise, seed=seed))
        try:
            r = decompose(t, 100, ExtractionConfig(seed=seed), truth=comp)
        except ExtractionStall as stall:
            partial = stall.partial
            near = (np.min(np.linalg.norm(partial[:, None] - comp.vectors[None], axis=2), axis=1)
                    if len(partial) else np.zeros(0))
            runs.append({"seed": seed, "stall": stall.index, "partial": partial,
                         "partial_nearest": near, "seconds_ok": time.perf_counter() - t0 < 600})
            lines.append(f"seed {seed}: stall at {stall.index}/100, accepted candidates are "
                         f"{near.min() if len(near) else float('nan'):.2f}-{near.max() if len(near) else float('nan'):.2f} "
                         f"from the nearest true component")
            continue
        runs.append({"seed": seed, "stall": None, "extracted": float(np.max(r.extracted_distances)),
                     "refined": float(np.max(r.distances)), "residual": r.residual_fro,
                     "seconds_ok": time.perf_counter() - t0 < 600})
        lines.append(f"seed {seed}: extracted {runs[-1]['extracted']:.3f}, refined {runs[-1]['refined']:.1e}, "
                     f"residual {r.residual_fro:.1e}")
    return runs, "; ".join(lines)


def criterion_4():
    runs, detail = _recovery(0.0)
    ok = all(r["stall"] is None and r["extracted"] <= 0.1 and r["refined"] <= 1e-6 and r["residual"] <= 1e-5
             and r["seconds_ok"] for r in runs)
    return ok, detail, runs


def criterion_5():
    noise = decomposition_noise_budget(50)
    runs, detail = _recovery(noise)
    ok = all(r["stall"] is None and r["extracted"] <= 0.1 and r["refined"] <= 0.02 and r["seconds_ok"]
             for r in runs)
    return ok, f"noise {noise:.4f}; {detail}", runs


def criterion_6():
    t0 = time.perf_counter()
    rank_one = []
    for n in (1, 2, 3):
        dense = np.zeros((n, n, n))
        dense[0, 0, 0] = 1.0
        rank_one.append(solve(build_certification_problem(from_dense(dense), 4))[1].opt_value)
    gaps = []
    for seed in range(10):
        n = 2 + seed % 2
        t = from_dense(symmetrize(stream(seed, "acceptance", "sdp-tensor").standard_normal((n, n, n))))
        opt = solve(build_certification_problem(t, 4))[1].opt_value
        gaps.append(opt - best_ascent(t, 50, seed, steps=3000))
    elapsed = time.perf_counter() - t0
    ok = all(abs(v - 1) <= 1e-3 for v in rank_one) and min(gaps) >= -1e-3 and elapsed < 120
    detail = (f"rank-one OPT {[f'{v:.6f}' for v in rank_one]}, min(OPT - ascent) over 10 = {min(gaps):.2e}, "
              f"{elapsed:.1f}s")
    return ok, detail, {"rank_one": rank_one, "gaps": gaps}


def criterion_7():
    t0 = time.perf_counter()
    by_m = scaling_experiment([(100, m) for m in (50, 100, 200, 400)], trials=10, seed=0, threads=0)
    by_n = scaling_experiment([(n, n) for n in (50, 100, 200, 400)], trials=10, seed=0, threads=0)
    elapsed = time.perf_counter() - t0
    a, b = by_m.slope("cross-vs-m", 100), by_n.slope("cross-vs-n")
    ok = 0.7 <= a.slope <= 1.3 and -0.8 <= b.slope <= -0.2 and elapsed < 600
    detail = (f"slope vs m at n=100: {a.slope:.3f} +- {a.halfwidth:.3f} (want [0.7, 1.3]); "
              f"slope vs n at m=n: {b.slope:.3f} +- {b.halfwidth:.3f} (want [-0.8, -0.2]); {elapsed:.0f}s")
    return ok, detail, {"by_m": by_m.to_csv(), "by_n": by_n.to_csv()}


def criterion_8():
    comp = sample_components(20, 40, seed=8)
    tau = rademacher(stream(8, "acceptance", "bernstein-tau"), 40)
    tables = {
        "row": bernstein_empirical_check(row_family(comp, 0), trials=2000, seed=8, grid_points=20),
        "t-sum": bernstein_empirical_check(t_family(comp, tau), trials=2000, seed=9, grid_points=20),
    }
    violations = sum(r.violated for rows in tables.values() for r in rows)
    ok = violations == 0 and all(len(rows) == 20 for rows in tables.values())
    payload = {k: [(r.t, r.empirical, r.bound) for r in rows] for k, rows in tables.items()}
    return ok, f"families {sorted(tables)}, 2000 trials x 20 grid points each, {violations} violations", payload


def criterion_9():
    s = decoupling_experiment(50, 100, trials=200, seed=9, threads=0)
    ok = 0.2 <= s.median_ratio <= 5.0
    payload = [(x.norm_coupled, x.norm_decoupled) for x in s.samples]
    return ok, f"median |M'| / median |M''| = {s.median_ratio:.4f} (want [0.2, 5.0])", payload


def criterion_10():
    failures, margins = 0, []
    for k in range(50):
        n = 3 + k % 8
        m = 2 * n
        comp = sample_components(n, m, seed=k)
        tau = rademacher(stream(k, "acceptance", "kron-tau"), m)
        i = k % m
        holds, margin = t_i_domination_check(comp, tau, i)
        a = comp.vectors[i]
        exact = np.max(np.abs(t_matrix(comp, tau, i) - kronecker(np.outer(a, a), t_right_factor(comp, tau, i))))
        failures += (not holds) + (exact > 1e-12)
        margins.append(margin)
    for k in range(50):
        rng = stream(k, "acceptance", "kron-psd")
        p_dim, r_dim = 2 + k % 4, 2 + (k // 4) % 4
        h = rng.standard_normal((p_dim, p_dim))
        g = rng.standard_normal((p_dim, 2))
        r = rng.standard_normal((r_dim, r_dim))
        failures += not kronecker_psd_check(h + h.T, h + h.T + g @ g.T, r @ r.T, probes=100, seed=k)
    return failures == 0, f"100 T_i checks + 50 Kronecker-PSD checks, {failures} failures", margins


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}


def _run(number):
    ok, detail, payload = CRITERIA[number]()
    PAYLOADS[number] = _payload(payload)
    return ok, detail


class TestAcceptance:
    @pytest.mark.parametrize("number", range(1, 11))
    def test_criterion(self, number, capsys):
        ok, detail = _run(number)
        report(capsys, number, ok, detail)
        assert ok, detail

    def test_criterion_11_reproducible(self, capsys):
        mismatched = []
        for number, fn in CRITERIA.items():
            first = PAYLOADS.get(number)
            if first is None:
                _run(number)
                first = PAYLOADS[number]
            again = _payload(fn()[2])
            if again != first:
                mismatched.append(number)
        digest = hashlib.sha256(b"".join(PAYLOADS[k] for k in sorted(PAYLOADS))).hexdigest()[:16]
        ok = not mismatched
        report(capsys, 11, ok, f"reran criteria 1-10, mismatched: {mismatched or 'none'}, digest {digest}")
        assert ok
