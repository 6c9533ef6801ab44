"""Uncertainty-relation criteria evaluated into :class:`CriterionReport` objects.

All quantities are kept at the variance level; square roots appear only in
``s_min`` and in the Theorem-1 style product ``sqrt(Var(O1) Var_inf(O2))``.

A report's ``violated`` flag means the measured statistics are
inconsistent with the premise the bound encodes (a mixture of narrow
states, or a local model built from quantum states). It says nothing about
macroscopic realism as such.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError
from .hilbert import (
    LinearOperator,
    Observable,
    SpaceDescriptor,
    State,
    expectation,
    local_matrix,
    p_op,
    schwinger_spin_ops,
    spin_ladder_ops,
    tensor,
    variance,
    x_op,
)
from .inference import (
    BinningSpec,
    conditional_table,
    default_binning,
    inferred_mean_modulus,
    inferred_variance,
    subsystem_complex_mean,
    subsystem_moments,
)
from . import states as _states

CRITERION_IDS = (
    "cv_sscopic",
    "spin_sscopic",
    "cv_sscopic_inferred",
    "spin_sscopic_inferred",
    "theorem1_cv",
    "theorem1_spin",
    "epr_product_cv",
    "epr_product_spin",
    "epr_product_spin_uninf_rhs",
    "epr_sum_spin",
    "mr_bound",
)
SIZE_CRITERIA = {"cv_sscopic", "spin_sscopic", "cv_sscopic_inferred", "spin_sscopic_inferred"}
BIPARTITE_CRITERIA = set(CRITERION_IDS) - {"cv_sscopic", "spin_sscopic", "mr_bound"}

VIOLATION_FLOOR = 1e-9
CV_BENCHMARK_S = 2.0
ZERO_VARIANCE = 1e-12
CONVERGENCE_RTOL = 1e-4
REPORT_SCHEMA_VERSION = "1.0"


def violation_tolerance(ci: float = 0.0) -> float:
    return max(VIOLATION_FLOOR, 3.0 * ci)


@dataclass(frozen=True)
class CriterionReport:
    criterion_id: str
    lhs: float
    rhs: float
    ratio: float
    violated: bool
    s_min: float | None = None
    method: str = "analytic"
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        meta = {
            "cutoff": None,
            "bins": None,
            "seed": None,
            "n": None,
            "ci": 0.0,
            "tolerances": {},
        }
        meta.update(self.metadata)
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "criterion_id": self.criterion_id,
            "lhs": _finite_or_none(self.lhs),
            "rhs": _finite_or_none(self.rhs),
            "ratio": _finite_or_none(self.ratio),
            "violated": bool(self.violated),
            "s_min": _finite_or_none(self.s_min),
            "method": self.method,
            "metadata": _jsonable(meta),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _finite_or_none(v):
    # +inf (unbounded ratio) has no JSON encoding; null stands for it
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return _finite_or_none(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def make_report(
    criterion_id: str,
    lhs: float,
    rhs: float,
    *,
    method: str = "analytic",
    ci: float = 0.0,
    s_min: float | None = None,
    metadata: dict | None = None,
) -> CriterionReport:
    """Assemble a report; ``violated`` iff ``rhs - lhs`` exceeds the noise tolerance."""
    if criterion_id not in CRITERION_IDS:
        raise ValueError(f"unknown criterion {criterion_id!r}")
    tol = violation_tolerance(ci)
    lhs, rhs = float(lhs), float(rhs)
    ratio = lhs / rhs if rhs > 0 else math.inf
    meta = dict(metadata or {})
    meta["ci"] = float(ci)
    meta.setdefault("tolerances", {})
    meta["tolerances"] = dict(meta["tolerances"], violation=tol)
    return CriterionReport(criterion_id, lhs, rhs, ratio, (rhs - lhs) > tol, s_min, method, meta)


# ---------------------------------------------------------------------------
# Single-system superposition size
# ---------------------------------------------------------------------------


def mr_bound(S: float) -> float:
    """Smallest p variance a mixture of states with x-spread at most ``S`` allows: 4/S^2."""
    if not S > 0:
        raise ValueError(f"superposition size S must be positive, got {S}")
    return 4.0 / S**2


def cv_superposition_size(
    p_variance: float, s_ref: float = CV_BENCHMARK_S, *, ci: float = 0.0, method: str = "analytic", metadata=None
) -> CriterionReport:
    """Superposition size implied by a p variance: ``s_min = 2 / sqrt(Var p)``.

    The report compares ``Var p`` against ``4 / s_ref^2``; with the default
    ``s_ref = 2`` (coherent-state benchmark) ``violated`` means squeezing.
    For example ``Var p = 0.16`` gives ``s_min = 5.0``.
    """
    if not p_variance > 0:
        raise ValueError(f"p variance must be positive, got {p_variance}")
    s_min = 2.0 / math.sqrt(p_variance)
    meta = {"benchmark_s": s_ref, "nontrivial": s_min > CV_BENCHMARK_S}
    meta.update(metadata or {})
    return make_report("cv_sscopic", p_variance, mr_bound(s_ref), method=method, ci=ci, s_min=s_min, metadata=meta)


def spin_superposition_size(
    jy_variance: float, jz_mean: float, s_ref: float = 1.0, *, ci: float = 0.0, method: str = "analytic", metadata=None
) -> CriterionReport:
    """Spread of J_X superpositions implied by ``s_min = |<J_Z>| / sqrt(Var J_Y)``.

    The report compares ``Var J_Y`` against ``<J_Z>^2 / s_ref^2`` (default:
    one eigenvalue spacing). A zero mean carries no information; ``s_min``
    is then 0 and the metadata says so.
    """
    if not jy_variance > 0:
        raise ValueError(f"J_Y variance must be positive, got {jy_variance}")
    meta = {"benchmark_s": s_ref}
    if abs(jz_mean) <= ZERO_VARIANCE:
        s_min = 0.0
        meta["vacuous_bound"] = True
    else:
        s_min = abs(jz_mean) / math.sqrt(jy_variance)
    meta["jz_mean"] = jz_mean
    meta.update(metadata or {})
    rhs = jz_mean**2 / s_ref**2
    return make_report("spin_sscopic", jy_variance, rhs, method=method, ci=ci, s_min=s_min, metadata=meta)


# ---------------------------------------------------------------------------
# Default observables
# ---------------------------------------------------------------------------


def cv_ops(space: SpaceDescriptor, subsystem="A"):
    """``(x, p)`` on the first mode of a subsystem."""
    part = space.part(subsystem)
    return x_op(part, 0), p_op(part, 0)


def spin_ops(space: SpaceDescriptor, subsystem="A"):
    """``(J_X, J_Y, J_Z)`` of a subsystem: ladder matrices for a spin, Schwinger for two modes."""
    part = space.part(subsystem)
    if part.kind == "spin":
        if part.n_modes != 1:
            raise ValueError("spin criteria need one spin per subsystem")
        return spin_ladder_ops((part.mode_dims[0] - 1) / 2)
    if part.n_modes != 2:
        raise ValueError("Schwinger spin needs exactly two Fock modes per subsystem")
    return schwinger_spin_ops(part, 0, 1)


def spin_j(space: SpaceDescriptor, subsystem="A") -> float:
    part = space.part(subsystem)
    if part.kind != "spin" or part.n_modes != 1:
        raise ValueError("j is only defined for a single spin subsystem")
    return (part.mode_dims[0] - 1) / 2


def hoffmann_bound(j: float) -> float:
    """Lower bound ``j/2`` on the sum of the three spin variances."""
    return j / 2


def _resolve_binning(state, b_observable, binning):
    # an integer means the default +-6 sd window with that many bins
    if isinstance(binning, int) and not isinstance(binning, bool):
        return default_binning(state, b_observable, binning)
    if isinstance(binning, str):
        if binning != "auto":
            raise ValueError(f"binning must be a BinningSpec, a bin count, None or 'auto', got {binning!r}")
        return default_binning(state, b_observable)
    return binning


def _table(state, b_observable, binning):
    return conditional_table(state, b_observable, _resolve_binning(state, b_observable, binning))


def _base_metadata(state: State, tables=()) -> dict:
    space = state.space
    meta = {
        "cutoff": list(space.cutoffs) if space.kind == "fock" else None,
        "mode_dims": list(space.mode_dims),
        "bins": None,
        "seed": None,
        "n": None,
    }
    if tables:
        meta["bins"] = tables[0].metadata["bins"]
        meta["tables"] = [t.metadata for t in tables]
    return meta


def _local_commutator(space, op1, op2) -> LinearOperator:
    part = space.part("A")
    m1, m2 = local_matrix(op1, space, "A"), local_matrix(op2, space, "A")
    return LinearOperator(part, m1 @ m2 - m2 @ m1, f"[{op1.label},{op2.label}]")


# ---------------------------------------------------------------------------
# Inferred superposition size
# ---------------------------------------------------------------------------


def cv_superposition_size_inferred(
    state: State,
    b_observable: Observable | None = None,
    binning: BinningSpec | str | None = "auto",
    a_observable: Observable | None = None,
) -> CriterionReport:
    """``s_min = 2 / sqrt(Var_inf p)`` with p on A inferred from ``b_observable`` (default p on B)."""
    if a_observable is None:
        a_observable = cv_ops(state.space, "A")[1]
    if b_observable is None:
        b_observable = cv_ops(state.space, "B")[1]
    table = _table(state, b_observable, binning)
    v_inf = inferred_variance(table, a_observable)
    meta = _base_metadata(state, [table])
    meta["a_observable"] = a_observable.label
    if v_inf <= ZERO_VARIANCE:
        raise ValueError("inferred p variance is zero; the size bound is unbounded")
    base = cv_superposition_size(v_inf, metadata=meta)
    return _with_id(base, "cv_sscopic_inferred")


def _with_id(report: CriterionReport, criterion_id: str) -> CriterionReport:
    return CriterionReport(
        criterion_id, report.lhs, report.rhs, report.ratio, report.violated, report.s_min, report.method, report.metadata
    )


def spin_superposition_size_inferred(
    state: State,
    b_observable: Observable | None = None,
    binning: BinningSpec | str | None = None,
    a_ops: Sequence[Observable] | None = None,
    s_ref: float = 1.0,
) -> CriterionReport:
    """``s_min = |<J_Z>| / sqrt(Var_inf J_Y)`` with J_Y on A inferred from B (default J_Y on B).

    ``<J_Z>`` is the unconditional mean on A. When the inferred variance
    vanishes the bound is unbounded and ``s_min`` is capped at the spectral
    extent of J_X on A, flagged ``exceeds_spectrum``.
    """
    jx, jy, jz = a_ops if a_ops is not None else spin_ops(state.space, "A")
    if b_observable is None:
        b_observable = spin_ops(state.space, "B")[1]
    table = _table(state, b_observable, binning)
    v_inf = inferred_variance(table, jy)
    jz_mean, _ = subsystem_moments(state, jz, "A")
    meta = _base_metadata(state, [table])
    if v_inf <= ZERO_VARIANCE:
        ev = np.linalg.eigvalsh(local_matrix(jx, state.space, "A"))
        meta.update(exceeds_spectrum=True, jz_mean=jz_mean, benchmark_s=s_ref)
        if abs(jz_mean) <= ZERO_VARIANCE:
            meta["vacuous_bound"] = True
        return make_report(
            "spin_sscopic_inferred", v_inf, jz_mean**2 / s_ref**2, s_min=float(ev[-1] - ev[0]), metadata=meta
        )
    base = spin_superposition_size(v_inf, jz_mean, s_ref, metadata=meta)
    return _with_id(base, "spin_sscopic_inferred")


# ---------------------------------------------------------------------------
# Inferred uncertainty relations and EPR inequalities
# ---------------------------------------------------------------------------


def theorem1_report(
    state: State,
    a_obs1: Observable,
    a_obs2: Observable,
    b_observable: Observable,
    binning: BinningSpec | str | None = None,
    criterion_id: str = "theorem1_cv",
) -> CriterionReport:
    """``sqrt(Var(O1) Var_inf(O2)) >= |<C>|_inf / 2`` with ``C = [O1, O2]`` (truncated).

    Holds for every quantum state; a violation signals a numerical fault.
    The metadata carries each link of the proof chain.
    """
    table = _table(state, b_observable, binning)
    _, var1 = subsystem_moments(state, a_obs1, "A")
    _, cond_var1 = table.moments(a_obs1)
    _, cond_var2 = table.moments(a_obs2)
    probs = table.probabilities
    v_inf2 = float(np.dot(probs, cond_var2))
    c_inf = inferred_mean_modulus(table, _local_commutator(state.space, a_obs1, a_obs2))
    meta = _base_metadata(state, [table])
    meta["chain"] = {
        "var_o1": var1,
        "avg_cond_var_o1": float(np.dot(probs, cond_var1)),
        "inferred_var_o2": v_inf2,
        "avg_cond_sd_product": float(np.dot(probs, np.sqrt(cond_var1 * cond_var2))),
        "c_inf": c_inf,
    }
    lhs = math.sqrt(var1 * v_inf2)
    return make_report(criterion_id, lhs, c_inf / 2, metadata=meta)


def epr_product_report(
    state: State,
    a_obs1: Observable,
    a_obs2: Observable,
    b_setting1: Observable,
    b_setting2: Observable,
    binning: BinningSpec | str | None = None,
    criterion_id: str = "epr_product_cv",
    rhs_variant: str = "inferred",
) -> CriterionReport:
    """``Var_inf(O1) Var_inf(O2) >= (|<C>|_inf)^2 / 4``.

    O1 is inferred from ``b_setting1`` and O2 from ``b_setting2``.
    ``|<C>|_inf`` is evaluated on both conditioning tables and the larger
    value is used; every local model built from quantum states bounds both.
    ``rhs_variant="uninferred"`` uses the weaker ``|<C>|^2 / 4`` instead.
    """
    if rhs_variant not in ("inferred", "uninferred"):
        raise ValueError("rhs_variant must be 'inferred' or 'uninferred'")
    t1 = _table(state, b_setting1, binning)
    t2 = _table(state, b_setting2, binning)
    v1 = inferred_variance(t1, a_obs1)
    v2 = inferred_variance(t2, a_obs2)
    comm = _local_commutator(state.space, a_obs1, a_obs2)
    meta = _base_metadata(state, [t1, t2])
    meta["inferred_variances"] = [v1, v2]
    if rhs_variant == "inferred":
        c_vals = [inferred_mean_modulus(t1, comm), inferred_mean_modulus(t2, comm)]
        meta["c_inf_per_setting"] = c_vals
        c = max(c_vals)
    else:
        c = abs(subsystem_complex_mean(state, comm, "A"))
        meta["c_mean_modulus"] = c
    meta["rhs_variant"] = rhs_variant
    return make_report(criterion_id, v1 * v2, c * c / 4, metadata=meta)


def epr_sum_report(
    state: State,
    a_observables: Sequence[Observable],
    b_settings: Sequence[Observable],
    bound: float,
    binning: BinningSpec | str | None = None,
    criterion_id: str = "epr_sum_spin",
) -> CriterionReport:
    """``sum_i Var_inf(O_i) >= D``, each O_i inferred from its own B setting."""
    if len(a_observables) != len(b_settings) or not a_observables:
        raise ValueError("need one B setting per A observable")
    if not bound > 0:
        raise ValueError("bound D must be positive")
    tables = [_table(state, b, binning) for b in b_settings]
    values = [inferred_variance(t, a) for t, a in zip(tables, a_observables)]
    meta = _base_metadata(state, tables)
    meta["inferred_variances"] = values
    return make_report(criterion_id, float(sum(values)), bound, metadata=meta)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def evaluate(state: State, criterion_id: str, *, S: float | None = None, binning="default") -> CriterionReport:
    """Evaluate a criterion with the standard observables for ``state``.

    CV criteria use x and p on the first mode of each side; spin criteria
    use the ladder (or Schwinger) spin of each side. ``binning="default"``
    picks 200 bins over +-6 sd for quadratures and exact eigenvalue grouping
    for spins.
    """
    if criterion_id not in CRITERION_IDS:
        raise ValueError(f"unknown criterion {criterion_id!r}; choose from {list(CRITERION_IDS)}")
    space = state.space
    cv_binning = "auto" if binning == "default" else binning
    spin_binning = None if binning == "default" else binning

    if criterion_id in ("cv_sscopic", "mr_bound"):
        p = cv_ops(space, "A")[1] if space.is_bipartite else p_op(space, 0)
        var = subsystem_moments(state, p, "A")[1] if space.is_bipartite else variance(state, p)
        if criterion_id == "cv_sscopic":
            return cv_superposition_size(var, metadata=_base_metadata(state))
        if S is None:
            raise ValueError("mr_bound needs S")
        meta = _base_metadata(state)
        meta["S"] = S
        return make_report("mr_bound", var, mr_bound(S), metadata=meta)
    if criterion_id == "spin_sscopic":
        if space.is_bipartite:
            _, jy, jz = spin_ops(space, "A")
            jy_var = subsystem_moments(state, jy, "A")[1]
            jz_mean = subsystem_moments(state, jz, "A")[0]
        else:
            _, jy, jz = _single_spin_ops(space)
            jy_var, jz_mean = variance(state, jy), expectation(state, jz)
        return spin_superposition_size(jy_var, jz_mean, metadata=_base_metadata(state))

    if not space.is_bipartite:
        raise ValueError(f"{criterion_id} needs a bipartite state")
    if criterion_id == "cv_sscopic_inferred":
        return cv_superposition_size_inferred(state, binning=cv_binning)
    if criterion_id == "spin_sscopic_inferred":
        return spin_superposition_size_inferred(state, binning=spin_binning)
    if criterion_id == "theorem1_cv":
        xa, pa = cv_ops(space, "A")
        return theorem1_report(state, xa, pa, cv_ops(space, "B")[1], cv_binning, "theorem1_cv")
    if criterion_id == "theorem1_spin":
        jx, jy, _ = spin_ops(space, "A")
        return theorem1_report(state, jx, jy, spin_ops(space, "B")[1], spin_binning, "theorem1_spin")
    if criterion_id == "epr_product_cv":
        xa, pa = cv_ops(space, "A")
        xb, pb = cv_ops(space, "B")
        return epr_product_report(state, xa, pa, xb, pb, cv_binning, "epr_product_cv")
    if criterion_id in ("epr_product_spin", "epr_product_spin_uninf_rhs"):
        jx, jy, _ = spin_ops(space, "A")
        bx, by, _ = spin_ops(space, "B")
        variant = "inferred" if criterion_id == "epr_product_spin" else "uninferred"
        return epr_product_report(state, jx, jy, bx, by, spin_binning, criterion_id, variant)
    if criterion_id == "epr_sum_spin":
        return epr_sum_report(
            state, spin_ops(space, "A"), spin_ops(space, "B"), hoffmann_bound(spin_j(space, "A")), spin_binning
        )
    raise AssertionError(criterion_id)


def _single_spin_ops(space):
    if space.kind == "spin":
        return spin_ladder_ops((space.mode_dims[0] - 1) / 2)
    return schwinger_spin_ops(space, 0, 1)


def _reference_partner(state: State) -> State:
    """Uncorrelated B partner for single-system states: vacuum, or ``|j, j>``."""
    space = state.space
    if space.kind == "fock":
        return _states.vacuum(space.cutoffs[0])
    return _states.spin_coherent((space.mode_dims[0] - 1) / 2)


def prepare_state(spec: "_states.StateSpec", criterion_id: str, cutoff: int | None = None) -> State:
    """Build ``spec`` (optionally at a new cutoff), pairing it with a B partner if needed."""
    if cutoff is not None:
        spec = spec.with_cutoff(cutoff)
    state = _states.build(spec)
    if criterion_id in BIPARTITE_CRITERIA and not state.space.is_bipartite:
        if state.space.n_modes != 1:
            raise ValueError(f"{criterion_id} needs a bipartite state; {spec.to_text()} has no A|B split")
        state = tensor(state, _reference_partner(state))
    return state


def evaluate_spec(
    spec: "_states.StateSpec",
    criterion_id: str,
    *,
    S: float | None = None,
    binning="default",
    check_convergence: bool = True,
    rtol: float = CONVERGENCE_RTOL,
) -> CriterionReport:
    """Build a state from its spec and evaluate a criterion.

    For Fock states the evaluation is repeated at a cutoff 25% larger; if
    ``lhs`` or ``rhs`` moves by more than ``rtol`` (relative) a
    :class:`ConvergenceError` is raised.
    """
    state = prepare_state(spec, criterion_id)
    report = evaluate(state, criterion_id, S=S, binning=binning)
    meta = dict(report.metadata)
    meta["state"] = spec.to_text()
    if check_convergence and spec.kind == "fock":
        base = _states.default_cutoff(spec)
        bigger = math.ceil(1.25 * base)
        check = evaluate(prepare_state(spec, criterion_id, bigger), criterion_id, S=S, binning=binning)
        change = max(_rel_change(report.lhs, check.lhs), _rel_change(report.rhs, check.rhs))
        meta["convergence"] = {"cutoff": bigger, "max_rel_change": change, "rtol": rtol}
        meta["tolerances"] = dict(meta.get("tolerances", {}), convergence=rtol)
        if change > rtol:
            raise ConvergenceError(
                f"{criterion_id} on {spec.to_text()} changes by {change:.2e} (> {rtol:.0e}) "
                f"when the cutoff grows from {base} to {bigger}"
            )
    return CriterionReport(
        report.criterion_id, report.lhs, report.rhs, report.ratio, report.violated, report.s_min, report.method, meta
    )


def _rel_change(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), 1e-12)
