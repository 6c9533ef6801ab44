import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwitness import states
from qwitness.criteria import cv_ops, spin_ops
from qwitness.errors import EmptyBranchError, SpaceMismatchError
from qwitness.hilbert import (
    LinearOperator,
    Observable,
    SpaceDescriptor,
    StateVector,
    mixture,
    number_op,
    reduce_to_subsystem,
    schwinger_spin_ops,
    tensor,
    x_op,
)
from qwitness.inference import (
    BinningSpec,
    conditional_table,
    default_binning,
    inferred_mean_modulus,
    inferred_variance,
    subsystem_complex_mean,
    subsystem_moments,
)


def random_pure(space, rng):
    v = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    return StateVector.normalized(space, v)


def brute_force_conditionals(rho_full, d_a, d_b, b_matrix, tol=1e-9):
    """Condition with explicit 1 (x) Pi projectors and an index-loop partial trace."""
    vals, vecs = np.linalg.eigh(b_matrix)
    out = []
    used = np.zeros(len(vals), bool)
    for i in range(len(vals)):
        if used[i]:
            continue
        group = np.abs(vals - vals[i]) < tol
        used |= group
        pi_b = vecs[:, group] @ vecs[:, group].conj().T
        proj = np.kron(np.eye(d_a), pi_b)
        m = proj @ rho_full @ proj
        cond = np.zeros((d_a, d_a), complex)
        for a in range(d_a):
            for a2 in range(d_a):
                for b in range(d_b):
                    cond[a, a2] += m[a * d_b + b, a2 * d_b + b]
        p = np.trace(cond).real
        if p > 1e-12:
            out.append((p, cond / p))
    return out


class TestBinningSpec:
    def test_invariants(self):
        with pytest.raises(ValueError):
            BinningSpec(1.0, 1.0)
        with pytest.raises(ValueError):
            BinningSpec(0.0, 1.0, bin_count=0)
        with pytest.raises(ValueError):
            BinningSpec(0.0, 1.0, tail_policy="wrap")

    def test_default_quadrature_binning(self):
        psi = states.tmss(0.8, cutoff=40)
        spec = default_binning(psi, cv_ops(psi.space, "B")[1])
        assert spec.bin_count == 200
        assert spec.hi == pytest.approx(6 * math.sqrt(math.cosh(1.6)), rel=1e-6)
        assert spec.tail_policy == "clip_to_edge_bins"


class TestConditionalTable:
    def test_product_state_identical_conditionals(self):
        rng = np.random.default_rng(2)
        a = random_pure(SpaceDescriptor.fock(3), rng)
        b = random_pure(SpaceDescriptor.fock(4), rng)
        psi = tensor(a, b)
        table = conditional_table(psi, x_op(psi.space.part("B")))
        for bin_ in table.bins:
            np.testing.assert_allclose(bin_.state.matrix, a.density().matrix, atol=1e-12)

    def test_tmss_number_conditionals_are_fock(self):
        psi = states.tmss(0.5, cutoff=30)
        table = conditional_table(psi, number_op(psi.space.part("B")))
        # high-n bins fall under the 1e-10 zero-probability threshold and are dropped
        assert 10 < len(table) < 31
        assert table.dropped_mass < 1e-9
        for k, bin_ in enumerate(table.bins):
            assert bin_.outcome == pytest.approx(k)
            assert bin_.state.matrix[k, k].real == pytest.approx(1, abs=1e-12)

    def test_singlet_jz_two_bins(self):
        sing = states.singlet()
        table = conditional_table(sing, spin_ops(sing.space, "B")[2])
        np.testing.assert_allclose(table.probabilities, [0.5, 0.5])

    def test_probabilities_sum_and_recombine(self):
        rng = np.random.default_rng(4)
        s = SpaceDescriptor.fock(4, 4, n_a=1)
        rho = mixture([0.3, 0.7], [random_pure(s, rng), random_pure(s, rng)])
        table = conditional_table(rho, x_op(s.part("B")), BinningSpec(-3, 3, 5))
        assert table.probabilities.sum() == pytest.approx(1, abs=1e-8)
        np.testing.assert_allclose(table.recombined(), reduce_to_subsystem(rho, "A").matrix, atol=1e-8)

    def test_drop_policy_reports_mass(self):
        psi = states.tmss(0.8, cutoff=30)
        table = conditional_table(psi, cv_ops(psi.space, "B")[1], BinningSpec(-1, 1, 10, tail_policy="drop"))
        assert 0 < table.dropped_mass < 1
        assert table.probabilities.sum() == pytest.approx(1)

    def test_wrong_subsystem(self):
        psi = states.tmss(0.3, cutoff=30)
        full_a = LinearOperator(psi.space, np.kron(x_op(psi.space.part("A")).matrix, np.eye(31)), "xA")
        with pytest.raises(SpaceMismatchError):
            conditional_table(psi, Observable(psi.space, full_a.matrix, "xA"))

    def test_all_empty(self):
        psi = tensor(states.vacuum(3), states.vacuum(3))
        n_b = number_op(psi.space.part("B"))
        with pytest.raises(EmptyBranchError):
            conditional_table(psi, n_b, BinningSpec(2.5, 3.5, 1, tail_policy="drop"))

    def test_workers_same_result(self):
        psi = states.tmss(0.8, cutoff=30)
        b = cv_ops(psi.space, "B")[1]
        serial = conditional_table(psi, b, default_binning(psi, b))
        threaded = conditional_table(psi, b, default_binning(psi, b), workers=4)
        np.testing.assert_array_equal(serial.probabilities, threaded.probabilities)


class TestInferredVariance:
    def test_product_state(self):
        psi = tensor(states.squeezed(0.4), states.vacuum(30))
        xa, pa = cv_ops(psi.space, "A")
        table = conditional_table(psi, cv_ops(psi.space, "B")[1], default_binning(psi, cv_ops(psi.space, "B")[1]))
        assert inferred_variance(table, pa) == pytest.approx(math.exp(-0.8), rel=1e-7)

    def test_tmss_200_bins(self):
        psi = states.tmss(0.8, cutoff=40)
        b = cv_ops(psi.space, "B")[1]
        v = inferred_variance(conditional_table(psi, b, default_binning(psi, b)), cv_ops(psi.space, "A")[1])
        assert v == pytest.approx(1 / math.cosh(1.6), rel=0.02)

    def test_singlet_zero(self):
        sing = states.singlet()
        table = conditional_table(sing, spin_ops(sing.space, "B")[2])
        assert inferred_variance(table, spin_ops(sing.space, "A")[2]) == pytest.approx(0, abs=1e-14)

    def test_refinement_never_increases(self):
        psi = states.tmss(0.6, cutoff=30)
        b = cv_ops(psi.space, "B")[1]
        pa = cv_ops(psi.space, "A")[1]
        spec = BinningSpec(-8, 8, 25)
        prev = inferred_variance(conditional_table(psi, b, spec), pa)
        for _ in range(4):
            spec = spec.refined(2)
            cur = inferred_variance(conditional_table(psi, b, spec), pa)
            assert cur <= prev + 1e-8
            prev = cur

    def test_offset_invariance(self):
        psi = states.tmss(0.8, cutoff=30)
        b = cv_ops(psi.space, "B")[1]
        pa = cv_ops(psi.space, "A")[1]
        spec = BinningSpec.around_marginal(math.sqrt(math.cosh(1.6)))
        v0 = inferred_variance(conditional_table(psi, b, spec), pa)
        v1 = inferred_variance(conditional_table(psi, b.shifted(3.7), spec), pa)
        assert v1 == pytest.approx(v0, abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_not_above_unconditional(self, seed):
        rng = np.random.default_rng(seed)
        s = SpaceDescriptor.fock(3, 3, n_a=1)
        psi = random_pure(s, rng)
        pa = cv_ops(s, "A")[1]
        table = conditional_table(psi, x_op(s.part("B")))
        assert inferred_variance(table, pa) <= subsystem_moments(psi, pa)[1] + 1e-10


class TestInferredMeanModulus:
    def test_product_state(self):
        psi = tensor(states.spin_coherent(1, theta=0.4), states.spin_coherent(1))
        jx, jy, jz = spin_ops(psi.space, "A")
        table = conditional_table(psi, spin_ops(psi.space, "B")[0])
        assert inferred_mean_modulus(table, jz) == pytest.approx(abs(subsystem_moments(psi, jz)[0]), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_dominates_plain_modulus(self, seed):
        rng = np.random.default_rng(seed)
        s = SpaceDescriptor.spin(1, 1, n_a=1)
        psi = random_pure(s, rng)
        jx, jy, jz = spin_ops(s, "A")
        c = LinearOperator(s.part("A"), jx.matrix @ jy.matrix - jy.matrix @ jx.matrix, "C")
        table = conditional_table(psi, spin_ops(s, "B")[1])
        assert inferred_mean_modulus(table, c) >= abs(subsystem_complex_mean(psi, c)) - 1e-10

    def test_schwinger_pair_brute_force(self):
        psi = states.tmss_pair(0.5, 0.3, cutoff=3, tail_tol=1e-2)
        s = psi.space
        d_a, d_b = s.dims_ab
        ja = schwinger_spin_ops(s.part("A"))
        jb = schwinger_spin_ops(s.part("B"))
        table = conditional_table(psi, jb[2])
        rho = psi.density().matrix
        brute = brute_force_conditionals(rho, d_a, d_b, jb[2].matrix)
        jz = ja[2].matrix
        expected = sum(p * abs(np.trace(c @ jz)) for p, c in brute)
        assert inferred_mean_modulus(table, ja[2]) == pytest.approx(expected, abs=1e-12)
        exp_var = sum(p * (np.trace(c @ ja[1].matrix @ ja[1].matrix) - np.trace(c @ ja[1].matrix) ** 2).real for p, c in brute)
        assert inferred_variance(table, ja[1]) == pytest.approx(exp_var, abs=1e-12)


class TestTheoremOneChain:
    @pytest.mark.parametrize("seed", range(10))
    def test_links(self, seed):
        rng = np.random.default_rng(seed)
        s = SpaceDescriptor.fock(5, 5, n_a=1)
        psi = random_pure(s, rng)
        xa, pa = cv_ops(s, "A")
        table = conditional_table(psi, x_op(s.part("B")))
        probs = table.probabilities
        _, vx = table.moments(xa)
        _, vp = table.moments(pa)
        var_x = subsystem_moments(psi, xa)[1]
        c = LinearOperator(s.part("A"), xa.matrix @ pa.matrix - pa.matrix @ xa.matrix, "C")
        c_inf = inferred_mean_modulus(table, c)
        assert var_x >= probs @ vx - 1e-12
        cs = (probs @ np.sqrt(vx * vp)) ** 2
        assert var_x * (probs @ vp) >= cs - 1e-12
        assert cs >= c_inf**2 / 4 - 1e-10
