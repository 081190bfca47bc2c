import json
import math

import numpy as np
import pytest

from sostensor.moment_sdp import (MonomialBasis, ProblemTooLarge, PseudoExpectation,
                                  build_certification_problem, certify_via_sdp, mixture_moments,
                                  solve, validate_pseudo_expectation)
from sostensor.decomposition import ascend_batch
from sostensor.instances import sample_instance
from sostensor.rng import stream, unit_vectors
from sostensor.tensor import ComponentSet, from_components, from_dense

from conftest import random_symmetric


def rank_one(n, scale=1.0):
    t = np.zeros((n, n, n))
    t[0, 0, 0] = scale
    return from_dense(t)


class TestBasis:
    def test_univariate_hankel(self):
        prob = build_certification_problem(from_dense(np.ones((1, 1, 1))), 4)
        b = prob.basis
        assert b.full == [(0,), (1,), (2,), (3,), (4,)]
        assert np.array_equal(b.moment_map(), [[0, 1, 2], [1, 2, 3], [2, 3, 4]])
        # normalization, then E[x^2 - 1] = 0, E[x^3 - x] = 0, E[x^4 - x^2] = 0
        expected = np.array([[1, 0, 0, 0, 0], [-1, 0, 1, 0, 0], [0, -1, 0, 1, 0], [0, 0, -1, 0, 1]])
        assert np.array_equal(prob.a_eq, expected)
        assert np.array_equal(prob.b_eq, [1, 0, 0, 0])

    @pytest.mark.parametrize("n,side", [(2, 6), (3, 10)])
    def test_matrix_sides(self, n, side):
        assert build_certification_problem(rank_one(n), 4).basis.matrix_side == side

    def test_graded_order(self):
        b = MonomialBasis(2, 2)
        assert b.full == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

    def test_point_moments(self):
        b = MonomialBasis(2, 4)
        y = b.point_moments([0.6, 0.8])
        assert y[b.index[(3, 1)]] == pytest.approx(0.6**3 * 0.8)

    def test_rejections(self):
        with pytest.raises(ValueError):
            build_certification_problem(rank_one(2), 3)
        with pytest.raises(ValueError):
            build_certification_problem(rank_one(2), 2)
        with pytest.raises(ProblemTooLarge):
            build_certification_problem(rank_one(40), 4)

    def test_objective_at_point_mass(self):
        t = from_dense(random_symmetric(3, 1))
        prob = build_certification_problem(t, 4)
        x = np.array([0.3, -0.4, 0.5])
        assert prob.objective_value(prob.basis.point_moments(x)) == pytest.approx(
            np.einsum("ijk,i,j,k->", t.dense, x, x, x), rel=1e-12)

    def test_problem_json(self):
        header = json.loads(build_certification_problem(rank_one(2), 4).to_json().split("\n")[0])
        assert header["kind"] == "moment-problem" and header["moments"] == 15


class TestSolve:
    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_rank_one_unit(self, n):
        _, rep = solve(build_certification_problem(rank_one(n), 4))
        assert rep.status == "converged"
        assert rep.opt_value == pytest.approx(1.0, abs=1e-4)

    def test_sos_identity_behind_rank_one_value(self):
        # 1 - t^3 = 1/2 |x - a|^2 ((t + 1/2)^2 + 3/4) on the sphere, t = <a, x>
        a = np.array([1.0, 0.0, 0.0])
        for x in unit_vectors(stream(0, "test", "sos"), 20, 3):
            t = a @ x
            assert 1 - t**3 == pytest.approx(0.5 * np.sum((x - a) ** 2) * ((t + 0.5) ** 2 + 0.75), abs=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_zero_tensor(self, n):
        _, rep = solve(build_certification_problem(from_dense(np.zeros((n, n, n))), 4))
        assert rep.opt_value == pytest.approx(0.0, abs=1e-7)

    def test_two_orthonormal_components(self):
        pe, rep = solve(build_certification_problem(from_components(ComponentSet(np.eye(2))), 4))
        assert rep.opt_value >= 1 - 1e-7
        assert rep.opt_value == pytest.approx(1.0, abs=1e-5)  # recorded from a converged run
        res, ok = validate_pseudo_expectation(pe, tol=1e-5)
        assert ok, res

    def test_degree_six(self):
        _, rep = solve(build_certification_problem(rank_one(2), 6))
        assert rep.opt_value == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("seed", range(10))
    def test_dominates_ascent(self, seed):
        n = 2 + seed % 2
        t = from_dense(random_symmetric(n, seed))
        _, rep = solve(build_certification_problem(t, 4))
        _, values = ascend_batch(t, unit_vectors(stream(seed, "test", "ascent"), 50, n), 2000, 1e-13)
        assert rep.opt_value >= np.nanmax(values) - 1e-3

    def test_max_iter_status(self):
        _, rep = solve(build_certification_problem(from_dense(random_symmetric(3, 0)), 4), max_iter=2)
        assert rep.status == "max_iter" and rep.iterations == 2


class TestVerdict:
    def test_rank_one_yes(self):
        assert certify_via_sdp(rank_one(2), threshold=1.5).verdict == "YES"

    def test_scaled_no(self):
        v = certify_via_sdp(rank_one(2, 2.0), threshold=1.5)
        assert v.verdict == "NO" and v.report.opt_value == pytest.approx(2.0, abs=1e-4)

    def test_zero_yes(self):
        assert certify_via_sdp(from_dense(np.zeros((2, 2, 2))), threshold=0.5).verdict == "YES"

    def test_undecided_and_warning(self):
        assert certify_via_sdp(from_dense(random_symmetric(3, 0)), threshold=1.0, max_iter=3).verdict == "UNDECIDED"
        v = certify_via_sdp(rank_one(2), threshold=1.0, tol=1e-6)
        assert v.verdict == "YES" and v.warning is not None

    def test_default_threshold(self):
        v = certify_via_sdp(from_components(sample_instance(3, 2, seed=1)[0]))
        assert v.threshold == pytest.approx(1 + 1 / math.log(3))


class TestValidation:
    def test_point_mass_valid(self):
        b = MonomialBasis(3, 4)
        x = unit_vectors(stream(1, "test", "pm"), 1, 3)[0]
        res, ok = validate_pseudo_expectation(PseudoExpectation(b, b.point_moments(x)), tol=1e-12)
        assert ok, res

    def test_bad_normalization(self):
        b = MonomialBasis(2, 4)
        y = b.point_moments([1.0, 0.0])
        y[0] = 0.9
        res, ok = validate_pseudo_expectation(PseudoExpectation(b, y))
        assert not ok and res.normalization_residual == pytest.approx(0.1)

    def test_symmetric_mixture(self):
        b = MonomialBasis(2, 4)
        y = mixture_moments(b, [[1.0, 0.0], [-1.0, 0.0]])
        _, ok = validate_pseudo_expectation(PseudoExpectation(b, y), tol=1e-12)
        assert ok
        odd = [k for k, alpha in enumerate(b.full) if sum(alpha) % 2]
        assert not np.any(y[odd])

    def test_off_sphere_point_invalid(self):
        b = MonomialBasis(2, 4)
        res, ok = validate_pseudo_expectation(PseudoExpectation(b, b.point_moments([2.0, 0.0])))
        assert not ok and res.ideal_residual > 1

    def test_moment_json(self):
        pe, _ = solve(build_certification_problem(rank_one(2), 4))
        head = json.loads(pe.to_json().split("\n")[0])
        assert head["kind"] == "pseudo-expectation" and head["degree"] == 4
        assert pe((3, 0)) == pytest.approx(1.0, abs=1e-4)
