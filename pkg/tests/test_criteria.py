import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qwitness import states
from qwitness.criteria import (
    CRITERION_IDS,
    cv_ops,
    cv_superposition_size,
    cv_superposition_size_inferred,
    epr_product_report,
    epr_sum_report,
    evaluate,
    evaluate_spec,
    hoffmann_bound,
    make_report,
    mr_bound,
    spin_ops,
    spin_superposition_size,
    spin_superposition_size_inferred,
    theorem1_report,
)
from qwitness.errors import ConvergenceError, TruncationError
from qwitness.hilbert import DensityMatrix, SpaceDescriptor, StateVector, mixture, tensor
from qwitness.inference import BinningSpec
from qwitness.states import StateSpec


def random_pure(space, rng):
    v = rng.standard_normal(space.dim) + 1j * rng.standard_normal(space.dim)
    return StateVector.normalized(space, v)


def separable_fixture(rng, kind):
    """Product or mixture of products, Fock 4x4 or a pair of spins."""
    if kind == "fock":
        sa, sb = SpaceDescriptor.fock(3), SpaceDescriptor.fock(3)
    else:
        j = rng.choice([0.5, 1.0, 1.5])
        sa, sb = SpaceDescriptor.spin(j), SpaceDescriptor.spin(j)
    k = int(rng.integers(1, 4))
    prods = [tensor(random_pure(sa, rng), random_pure(sb, rng)) for _ in range(k)]
    if k == 1:
        return prods[0]
    return mixture(rng.dirichlet(np.ones(k)), prods)


class TestReport:
    def test_violation_rule(self):
        r = make_report("epr_product_cv", 0.5, 1.0)
        assert r.violated and r.ratio == 0.5
        r = make_report("epr_product_cv", 1.0 - 1e-10, 1.0)
        assert not r.violated

    def test_ci_widens_tolerance(self):
        assert not make_report("epr_product_cv", 0.9, 1.0, ci=0.05).violated
        assert make_report("epr_product_cv", 0.8, 1.0, ci=0.05).violated

    def test_ratio_guard(self):
        r = make_report("spin_sscopic", 0.3, 0.0)
        assert r.ratio == math.inf
        assert r.to_dict()["ratio"] is None

    def test_unknown_id(self):
        with pytest.raises(ValueError):
            make_report("bell", 1, 1)

    def test_json_key_order(self):
        d = json.loads(make_report("mr_bound", 1, 1).to_json())
        assert list(d) == ["schema_version", "criterion_id", "lhs", "rhs", "ratio", "violated", "s_min", "method", "metadata"]
        for key in ("cutoff", "bins", "seed", "n", "ci", "tolerances"):
            assert key in d["metadata"]

    @given(st.floats(1e-3, 10), st.floats(1e-3, 10))
    @settings(max_examples=50)
    def test_violated_iff_ratio(self, lhs, rhs):
        r = make_report("epr_product_cv", lhs, rhs)
        tol = r.metadata["tolerances"]["violation"]
        assert r.violated == (r.ratio < 1 - tol / rhs)


class TestSizeFormulas:
    def test_dp_point_four(self):
        assert cv_superposition_size(0.4**2).s_min == pytest.approx(5.0)

    def test_vacuum_benchmark(self):
        r = cv_superposition_size(1.0)
        assert r.s_min == pytest.approx(2.0)
        assert not r.metadata["nontrivial"]

    def test_inferred_point_seven(self):
        assert cv_superposition_size(0.7**2).s_min == pytest.approx(2 / 0.7)

    def test_nonpositive(self):
        with pytest.raises(ValueError):
            cv_superposition_size(0.0)
        with pytest.raises(ValueError):
            spin_superposition_size(-1.0, 1.0)

    def test_mr_bound(self):
        assert mr_bound(2) == 1.0
        assert mr_bound(4) == 0.25
        with pytest.raises(ValueError):
            mr_bound(0)

    def test_spin_top_state(self):
        r = evaluate(states.spin_coherent(2), "spin_sscopic")
        assert r.s_min == pytest.approx(2.0)

    def test_spin_zero_mean(self):
        r = spin_superposition_size(0.5, 0.0)
        assert r.s_min == 0.0 and r.metadata["vacuous_bound"]

    def test_spin_coherent_j10(self):
        r = evaluate(states.spin_coherent(10), "spin_sscopic")
        assert r.s_min == pytest.approx(math.sqrt(20), abs=1e-10)


class TestInferredSize:
    def test_tmss(self):
        r = cv_superposition_size_inferred(states.tmss(0.8, cutoff=40))
        assert r.s_min == pytest.approx(2 * math.sqrt(math.cosh(1.6)), rel=0.02)
        assert r.criterion_id == "cv_sscopic_inferred"

    def test_product_reduces(self):
        psi = tensor(states.squeezed(0.5), states.vacuum(30))
        r = cv_superposition_size_inferred(psi)
        assert r.s_min == pytest.approx(2 * math.exp(0.5), rel=1e-6)

    def test_tmss_zero(self):
        r = cv_superposition_size_inferred(states.tmss(0.0, cutoff=30))
        assert r.s_min == pytest.approx(2.0, abs=1e-9)

    def test_spin_uncorrelated(self):
        a = states.spin_coherent(1.5, theta=0.6)
        psi = tensor(a, states.spin_coherent(1.5, theta=1.1))
        r = spin_superposition_size_inferred(psi)
        r0 = evaluate(a, "spin_sscopic")
        assert r.s_min == pytest.approx(r0.s_min, rel=1e-10)

    def test_singlet_capped(self):
        r = spin_superposition_size_inferred(states.singlet())
        assert r.metadata["exceeds_spectrum"]
        assert r.s_min == 1.0

    def test_offset_invariance(self):
        psi = states.tmss(0.8, cutoff=30)
        b = cv_ops(psi.space, "B")[1]
        spec = BinningSpec.around_marginal(math.sqrt(math.cosh(1.6)))
        r0 = cv_superposition_size_inferred(psi, b, spec)
        r1 = cv_superposition_size_inferred(psi, b.shifted(-2.5), spec)
        assert r1.s_min == pytest.approx(r0.s_min, abs=1e-12)
        assert (r1.lhs, r1.rhs, r1.violated) == pytest.approx((r0.lhs, r0.rhs, r0.violated), abs=1e-12)

    def test_schwinger_pair_brute_force(self):
        psi = states.tmss_pair(0.5, 0.3, cutoff=3, tail_tol=1e-2)
        s = psi.space
        r = spin_superposition_size_inferred(psi)
        ja, jb = spin_ops(s, "A"), spin_ops(s, "B")
        # brute force: explicit projectors 1 (x) |k><k| on eigenvectors of J_Y^B
        rho = psi.density().matrix
        d_a, d_b = s.dims_ab
        vals, vecs = np.linalg.eigh(jb[1].matrix)
        jy_full = np.kron(ja[1].matrix, np.eye(d_b))
        jz_full = np.kron(ja[2].matrix, np.eye(d_b))
        total = 0.0
        for v in np.unique(np.round(vals, 9)):
            cols = vecs[:, np.abs(vals - v) < 1e-9]
            proj = np.kron(np.eye(d_a), cols @ cols.conj().T)
            p = np.trace(proj @ rho).real
            if p < 1e-10:
                continue
            m1 = np.trace(proj @ rho @ jy_full).real / p
            m2 = np.trace(proj @ rho @ jy_full @ jy_full).real / p
            total += p * (m2 - m1 * m1)
        jz_mean = np.trace(rho @ jz_full).real
        assert r.lhs == pytest.approx(total, abs=1e-10)
        assert r.metadata["jz_mean"] == pytest.approx(jz_mean, abs=1e-12)


class TestTheorem1:
    def test_vacuum_saturates(self):
        r = evaluate(tensor(states.vacuum(30), states.vacuum(30)), "theorem1_cv")
        assert r.lhs == pytest.approx(1, abs=1e-12)
        assert r.rhs == pytest.approx(1, abs=1e-12)
        assert not r.violated

    def test_tmss(self):
        r = evaluate(states.tmss(0.8, cutoff=40), "theorem1_cv")
        assert r.lhs == pytest.approx(1, rel=0.02)
        assert not r.violated

    @pytest.mark.parametrize("seed", range(25))
    def test_random_states_never_violate(self, seed):
        rng = np.random.default_rng(seed)
        s = SpaceDescriptor.fock(5, 5, n_a=1)
        psi = random_pure(s, rng)
        xa, pa = cv_ops(s, "A")
        r = theorem1_report(psi, xa, pa, cv_ops(s, "B")[1], None)
        assert not r.violated
        assert r.lhs - r.rhs >= -1e-8
        chain = r.metadata["chain"]
        assert chain["var_o1"] >= chain["avg_cond_var_o1"] - 1e-12

    def test_spin_random(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            s = SpaceDescriptor.spin(1.5, 1, n_a=1)
            psi = random_pure(s, rng)
            jx, jy, _ = spin_ops(s, "A")
            r = theorem1_report(psi, jx, jy, spin_ops(s, "B")[0], None, "theorem1_spin")
            assert r.lhs - r.rhs >= -1e-8


class TestEPR:
    def test_tmss_violation(self):
        r = evaluate(states.tmss(0.8, cutoff=40), "epr_product_cv")
        assert r.lhs == pytest.approx(1 / math.cosh(1.6) ** 2, rel=0.04)
        assert r.rhs == pytest.approx(1, abs=1e-8)
        assert r.violated

    def test_tmss_zero(self):
        r = evaluate(states.tmss(0.0, cutoff=30), "epr_product_cv")
        assert r.lhs == pytest.approx(1, abs=1e-9)
        assert not r.violated

    def test_ratio_monotone_in_r(self):
        ratios = [evaluate(states.tmss(r), "epr_product_cv").ratio for r in (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)]
        for a, b in zip(ratios, ratios[1:]):
            assert b < a * (1 - 0.02)

    def test_singlet_sum(self):
        r = evaluate(states.singlet(), "epr_sum_spin")
        assert r.lhs == pytest.approx(0, abs=1e-14)
        assert r.rhs == 0.25
        assert r.violated

    def test_product_spin_sum(self):
        rng = np.random.default_rng(0)
        s = SpaceDescriptor.spin(0.5)
        for _ in range(10):
            psi = tensor(random_pure(s, rng), random_pure(s, rng))
            r = evaluate(psi, "epr_sum_spin")
            assert r.lhs == pytest.approx(0.5, abs=1e-12)
            assert not r.violated

    def test_maximally_mixed_pair(self):
        rho = DensityMatrix(SpaceDescriptor.spin(0.5, 0.5, n_a=1), np.eye(4) / 4)
        r = evaluate(rho, "epr_sum_spin")
        assert r.lhs == pytest.approx(0.75)
        assert not r.violated

    def test_hoffmann_bound(self):
        assert hoffmann_bound(0.5) == 0.25

    def test_uninferred_rhs_weaker(self):
        rng = np.random.default_rng(8)
        s = SpaceDescriptor.spin(1, 1, n_a=1)
        for _ in range(10):
            psi = random_pure(s, rng)
            inf = evaluate(psi, "epr_product_spin")
            plain = evaluate(psi, "epr_product_spin_uninf_rhs")
            assert plain.rhs <= inf.rhs + 1e-12
            assert inf.lhs == pytest.approx(plain.lhs)

    def test_sum_needs_matching_lists(self):
        sing = states.singlet()
        with pytest.raises(ValueError):
            epr_sum_report(sing, spin_ops(sing.space, "A"), spin_ops(sing.space, "B")[:2], 0.25)
        with pytest.raises(ValueError):
            epr_sum_report(sing, spin_ops(sing.space, "A"), spin_ops(sing.space, "B"), 0.0)

    def test_rhs_variant_checked(self):
        psi = states.tmss(0.3)
        xa, pa = cv_ops(psi.space, "A")
        xb, pb = cv_ops(psi.space, "B")
        with pytest.raises(ValueError):
            epr_product_report(psi, xa, pa, xb, pb, "auto", rhs_variant="maybe")


class TestSeparable:
    @pytest.mark.parametrize("seed", range(20))
    def test_no_false_positive(self, seed):
        rng = np.random.default_rng(1000 + seed)
        kind = "fock" if seed % 2 else "spin"
        rho = separable_fixture(rng, kind)
        ids = ["epr_product_cv"] if kind == "fock" else ["epr_product_spin", "epr_product_spin_uninf_rhs", "epr_sum_spin"]
        for cid in ids:
            binning = None if kind == "fock" else "default"
            r = evaluate(rho, cid, binning=binning)
            assert not r.violated, (cid, r.lhs, r.rhs)

    @pytest.mark.parametrize("S", [2.0, 3.0, 4.0])
    def test_mixture_fixture_not_flagged(self, S):
        rho = states.sscopic_mixture_fixture(S, count=4, seed=int(S))
        r = evaluate(rho, "mr_bound", S=S)
        assert not r.violated


class TestEvaluateSpec:
    def test_single_mode_gets_partner(self):
        r = evaluate_spec(StateSpec.parse("vacuum"), "theorem1_cv")
        assert r.lhs == pytest.approx(1)
        assert r.metadata["state"] == "vacuum"

    def test_convergence_recorded(self):
        r = evaluate_spec(StateSpec.parse("squeezed:r=0.5"), "cv_sscopic")
        assert r.metadata["convergence"]["max_rel_change"] < 1e-4
        assert r.s_min == pytest.approx(2 * math.exp(0.5), rel=1e-6)

    def test_convergence_failure(self):
        # at the default cutoff the 25% larger space moves Var p by ~1e-7
        with pytest.raises(ConvergenceError, match="cutoff"):
            evaluate_spec(StateSpec.parse("squeezed:r=1.0"), "cv_sscopic", rtol=1e-12)

    def test_truncation_overflow(self):
        with pytest.raises(TruncationError):
            evaluate_spec(StateSpec.parse("squeezed:r=0.5,cutoff=12"), "cv_sscopic")

    def test_all_ids_dispatch(self):
        for cid in CRITERION_IDS:
            spec = "singlet" if "spin" in cid else "tmss:r=0.5"
            kw = {"S": 4.0} if cid == "mr_bound" else {}
            r = evaluate_spec(StateSpec.parse(spec), cid, **kw)
            assert r.criterion_id == cid
