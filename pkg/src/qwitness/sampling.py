"""Finite-sample experiments: draw outcome records and estimate criteria from them.

Records hold pairs ``(O_A, O_B)`` drawn from the joint spectral distribution
of one A observable and one B observable. Estimators bin the B column,
average within-bin sample variances with bin-frequency weights, and attach
seeded bootstrap confidence intervals.

Record settings are named ``"<a>|<b>"`` with ``a`` in ``x, p, jx, jy, jz``
and ``b`` the B-side analogue (``xB``, ``pB``, ``jxB`` ...).
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import criteria as _criteria
from .criteria import CriterionReport, make_report, mr_bound
from .errors import EstimationError, MissingStatisticError
from .hilbert import LinearOperator, State, StateVector, local_matrix

N_BOOT = 200
MIN_PER_BIN = 50
Z95 = 1.959963984540054
_BOOT_SALT = 0xB0075


def _generator(seed) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class SampleRecord:
    setting: str
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    seed: int = 0
    noise: tuple = (0.0, 0.0)

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        b = np.array(self.b, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise ValueError("outcome columns must be 1-d and of equal length")
        if a.size < 1:
            raise ValueError("a record needs at least one sample")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "noise", tuple(float(s) for s in self.noise))

    @property
    def n(self) -> int:
        return self.a.size

    def to_text(self) -> str:
        """Columnar text: ``#`` header lines, a column header, one ``O_A,O_B`` row per sample."""
        out = io.StringIO()
        out.write(f"# setting: {self.setting}\n")
        out.write(f"# seed: {self.seed}\n")
        out.write(f"# n: {self.n}\n")
        out.write(f"# noise: {self.noise[0]!r},{self.noise[1]!r}\n")
        out.write("O_A,O_B\n")
        for x, y in zip(self.a.tolist(), self.b.tolist()):
            out.write(f"{x!r},{y!r}\n")
        return out.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SampleRecord":
        header = {}
        lines = text.splitlines()
        body_start = 0
        for i, line in enumerate(lines):
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                header[key.strip()] = value.strip()
            else:
                body_start = i + 1  # skip the column header
                break
        data = np.loadtxt(lines[body_start:], delimiter=",", ndmin=2) if len(lines) > body_start else np.empty((0, 2))
        noise = tuple(float(s) for s in header.get("noise", "0.0,0.0").split(","))
        rec = cls(header["setting"], data[:, 0], data[:, 1], int(header["seed"]), noise)
        if "n" in header and int(header["n"]) != rec.n:
            raise ValueError(f"record header says n={header['n']} but holds {rec.n} rows")
        return rec

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def read(cls, path) -> "SampleRecord":
        return cls.from_text(Path(path).read_text())


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def joint_distribution(state: State, a_observable: LinearOperator, b_observable: LinearOperator):
    """Eigenvalues of both observables and the joint outcome probabilities ``P[i, k]``."""
    space = state.space
    ma = local_matrix(a_observable, space, "A")
    mb = local_matrix(b_observable, space, "B")
    va, ua = np.linalg.eigh(ma)
    vb, ub = np.linalg.eigh(mb)
    d_a, d_b = space.dims_ab
    if isinstance(state, StateVector):
        amp = ua.conj().T @ state.amplitudes.reshape(d_a, d_b) @ ub.conj()
        probs = np.abs(amp) ** 2
    else:
        w = np.kron(ua, ub)
        probs = np.real(np.einsum("ij,ik,kj->j", w.conj(), state.matrix, w)).reshape(d_a, d_b)
    probs = np.clip(probs, 0.0, None)
    return va, vb, probs / probs.sum()


def sample_joint(
    state: State,
    a_observable: LinearOperator,
    b_observable: LinearOperator,
    n: int,
    seed: int,
    noise=(0.0, 0.0),
    setting: str | None = None,
) -> SampleRecord:
    """Draw ``n`` i.i.d. outcome pairs; eigenvalues are the outcomes.

    ``noise`` is the standard deviation of additive Gaussian detection noise
    on the A and B outcomes. Draws and the two noise streams come from
    independent children of ``SeedSequence(seed)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    va, vb, probs = joint_distribution(state, a_observable, b_observable)
    draw_ss, noise_a_ss, noise_b_ss = np.random.SeedSequence(seed).spawn(3)
    flat = _generator(draw_ss).choice(probs.size, size=n, p=probs.reshape(-1))
    ia, ib = np.unravel_index(flat, probs.shape)
    a, b = va[ia], vb[ib]
    sa, sb = float(noise[0]), float(noise[1])
    if sa > 0:
        a = a + sa * _generator(noise_a_ss).standard_normal(n)
    if sb > 0:
        b = b + sb * _generator(noise_b_ss).standard_normal(n)
    label = setting or f"{a_observable.label}|{b_observable.label}"
    return SampleRecord(label, a, b, seed, (sa, sb))


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapCI:
    se: float
    lo: float
    hi: float
    replicates: np.ndarray = field(repr=False)

    @property
    def half_width(self) -> float:
        return Z95 * self.se


@dataclass(frozen=True)
class InferredVarianceEstimate:
    estimate: float
    ci: BootstrapCI
    bin_width: float
    occupied_bins: int
    dropped_mass: float

    def __iter__(self):
        yield self.estimate
        yield self.ci


def default_bin_width(b: np.ndarray) -> float:
    """``range / sqrt(n)``, widened so an average occupied bin holds at least 50 samples."""
    n = b.size
    if n < MIN_PER_BIN:
        raise EstimationError(
            f"bins underpopulated: {n} samples cannot give {MIN_PER_BIN} samples per occupied bin"
        )
    span = float(b.max() - b.min())
    if span == 0.0:
        return 1.0
    return max(span / math.sqrt(n), MIN_PER_BIN * span / n)


def _bin_index(b: np.ndarray, origin: float, width: float) -> np.ndarray:
    # bins centred on origin + k * width
    idx = np.floor((b - origin) / width + 0.5).astype(np.int64)
    return idx - idx.min() if idx.size else idx


def _conditional_variance(a, idx):
    counts = np.bincount(idx)
    sums = np.bincount(idx, a)
    ok = counts >= 2
    if not np.any(ok):
        return math.nan, 0, 1.0
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    dev2 = np.bincount(idx, (a - means[idx]) ** 2)
    var = dev2[ok] / (counts[ok] - 1)
    kept = counts[ok].sum()
    return float(np.dot(counts[ok], var) / kept), int(ok.sum()), 1.0 - kept / a.size


def _conditional_mean_modulus(a, idx):
    counts = np.bincount(idx)
    sums = np.bincount(idx, a)
    ok = counts >= 1
    return float(np.sum(np.abs(sums[ok])) / a.size)


def _bootstrap(record: SampleRecord, stat, n_boot: int, tag: int) -> BootstrapCI:
    rng = _generator([record.seed, _BOOT_SALT, tag])
    n = record.n
    reps = np.empty(n_boot)
    for i in range(n_boot):
        sel = rng.integers(0, n, size=n)
        reps[i] = stat(sel)
    if np.any(~np.isfinite(reps)):
        raise EstimationError(f"bootstrap resamples of {record.setting!r} left no populated bin")
    se = float(np.std(reps, ddof=1)) if n_boot > 1 else 0.0
    lo, hi = np.percentile(reps, [2.5, 97.5])
    reps.setflags(write=False)
    return BootstrapCI(se, float(lo), float(hi), reps)


def estimate_inferred_variance(
    record: SampleRecord, bin_width: float | None = None, n_boot: int = N_BOOT
) -> InferredVarianceEstimate:
    """Average within-bin (n-1) variance of A, weighted by bin frequency.

    Bins with fewer than two samples are dropped and their share reported
    as ``dropped_mass``. Bin edges are fixed from the full record and reused
    for the 200 bootstrap resamples.
    """
    if record.n < 1:
        raise EstimationError("empty record")
    width = default_bin_width(record.b) if bin_width is None else float(bin_width)
    if not width > 0:
        raise ValueError("bin width must be positive")
    idx = _bin_index(record.b, float(record.b.min()), width)
    est, occupied, dropped = _conditional_variance(record.a, idx)
    if occupied == 0:
        raise EstimationError(f"bins underpopulated: no bin of {record.setting!r} holds two samples")
    ci = _bootstrap(record, lambda s: _conditional_variance(record.a[s], idx[s])[0], n_boot, 1)
    return InferredVarianceEstimate(est, ci, width, occupied, dropped)


def estimate_variance(record: SampleRecord, n_boot: int = N_BOOT):
    """Unconditional sample variance of the A column with its bootstrap CI."""
    if record.n < 2:
        raise EstimationError("a variance needs at least two samples")
    a = record.a
    ci = _bootstrap(record, lambda s: float(np.var(a[s], ddof=1)), n_boot, 2)
    return float(np.var(a, ddof=1)), ci


def estimate_mean(record: SampleRecord, n_boot: int = N_BOOT):
    a = record.a
    ci = _bootstrap(record, lambda s: float(np.mean(a[s])), n_boot, 3)
    return float(np.mean(a)), ci


def estimate_inferred_mean_modulus(record: SampleRecord, bin_width: float | None = None, n_boot: int = N_BOOT):
    """``sum_b P(b) |mean(A | b)|`` over B bins."""
    width = default_bin_width(record.b) if bin_width is None else float(bin_width)
    idx = _bin_index(record.b, float(record.b.min()), width)
    est = _conditional_mean_modulus(record.a, idx)
    ci = _bootstrap(record, lambda s: _conditional_mean_modulus(record.a[s], idx[s]), n_boot, 4)
    return est, ci


# ---------------------------------------------------------------------------
# Criteria from records
# ---------------------------------------------------------------------------

SETTINGS_FOR = {
    "cv_sscopic": ("p|pB",),
    "mr_bound": ("p|pB",),
    "cv_sscopic_inferred": ("p|pB",),
    "theorem1_cv": ("x|xB", "p|pB"),
    "epr_product_cv": ("x|xB", "p|pB"),
    "spin_sscopic": ("jy|jyB", "jz|jzB"),
    "spin_sscopic_inferred": ("jy|jyB", "jz|jzB"),
    "theorem1_spin": ("jx|jxB", "jy|jyB", "jz|jyB"),
    "epr_product_spin": ("jx|jxB", "jy|jyB", "jz|jxB", "jz|jyB"),
    "epr_product_spin_uninf_rhs": ("jx|jxB", "jy|jyB", "jz|jzB"),
    "epr_sum_spin": ("jx|jxB", "jy|jyB", "jz|jzB"),
}


def setting_observables(state: State, setting: str):
    """A and B observables named by a setting such as ``"p|pB"`` or ``"jz|jyB"``."""
    a_name, sep, b_name = setting.partition("|")
    if not sep or not b_name.endswith("B"):
        raise ValueError(f"malformed setting {setting!r}; expected e.g. 'p|pB'")
    return _named_op(state.space, a_name, "A"), _named_op(state.space, b_name[:-1], "B")


def _named_op(space, name, subsystem):
    if name in ("x", "p"):
        return _criteria.cv_ops(space, subsystem)["xp".index(name)]
    if name in ("jx", "jy", "jz"):
        return _criteria.spin_ops(space, subsystem)["xyz".index(name[1])]
    raise ValueError(f"unknown observable name {name!r}")


def setting_seed(seed: int, index: int) -> int:
    """64-bit seed of the ``index``-th record of a simulation run."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def simulate_records(
    state: State, criterion_id: str, n: int, seed: int, noise=(0.0, 0.0), workers: int | None = None
) -> list:
    """One record per setting the criterion needs, each on its own seed stream."""
    if criterion_id not in SETTINGS_FOR:
        raise ValueError(f"no sampled form for {criterion_id!r}")
    settings = SETTINGS_FOR[criterion_id]

    def run(item):
        i, setting = item
        a_op, b_op = setting_observables(state, setting)
        return sample_joint(state, a_op, b_op, n, setting_seed(seed, i), noise, setting)

    items = list(enumerate(settings))
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, items))
    return [run(it) for it in items]


def a_noise_for_target(noiseless_variance: float, target_variance: float) -> float:
    """A-side noise sd that lifts an inferred variance to ``target_variance``."""
    if target_variance < noiseless_variance:
        raise ValueError("additive noise cannot lower a variance")
    return math.sqrt(target_variance - noiseless_variance)


def _by_setting(records) -> dict:
    if isinstance(records, Mapping):
        return dict(records)
    return {r.setting: r for r in records}


def _need(recs, setting, criterion_id):
    if setting not in recs:
        raise MissingStatisticError(f"{criterion_id} needs a record for setting {setting!r}")
    return recs[setting]


def _combine(lhs, lhs_reps, rhs, rhs_reps):
    diff = np.asarray(lhs_reps) - np.asarray(rhs_reps)
    return Z95 * float(np.std(diff, ddof=1))


def estimate_criterion(
    criterion_id: str,
    records: Iterable[SampleRecord] | Mapping[str, SampleRecord],
    bin_width: float | None = None,
    *,
    S: float | None = None,
    bound: float | None = None,
    n_boot: int = N_BOOT,
) -> CriterionReport:
    """Sampled counterpart of the analytic criteria.

    The violation tolerance uses the bootstrap half-width of ``lhs - rhs``.
    CV criteria take the commutator term from ``[x, p] = 2i`` exactly.
    ``epr_sum_spin`` needs ``bound`` (``j/2``) and ``mr_bound`` needs ``S``.
    """
    if criterion_id not in SETTINGS_FOR:
        raise ValueError(f"unknown criterion {criterion_id!r}")
    recs = _by_setting(records)
    need = lambda s: _need(recs, s, criterion_id)  # noqa: E731
    ones = np.ones(n_boot)
    meta: dict = {"bins": None, "bin_width": bin_width}
    used = [need(s) for s in SETTINGS_FOR[criterion_id]]
    meta["seed"] = [r.seed for r in used]
    meta["n"] = [r.n for r in used]
    meta["settings"] = [r.setting for r in used]
    meta["noise"] = [list(r.noise) for r in used]
    meta["cutoff"] = None

    def inferred(setting):
        est = estimate_inferred_variance(need(setting), bin_width, n_boot)
        meta.setdefault("inferred", {})[setting] = {
            "estimate": est.estimate,
            "se": est.ci.se,
            "bin_width": est.bin_width,
            "occupied_bins": est.occupied_bins,
            "dropped_mass": est.dropped_mass,
        }
        return est.estimate, est.ci.replicates

    def plain_var(setting):
        v, ci = estimate_variance(need(setting), n_boot)
        return v, ci.replicates

    def c_inf(setting):
        v, ci = estimate_inferred_mean_modulus(need(setting), bin_width, n_boot)
        return v, ci.replicates

    cid = criterion_id
    s_min = None
    if cid in ("cv_sscopic", "mr_bound", "cv_sscopic_inferred"):
        v, reps = inferred("p|pB") if cid == "cv_sscopic_inferred" else plain_var("p|pB")
        if cid == "mr_bound":
            if S is None:
                raise MissingStatisticError("mr_bound needs S")
            lhs, lhs_r, rhs, rhs_r = v, reps, mr_bound(S), mr_bound(S) * ones
            meta["S"] = S
        else:
            lhs, lhs_r, rhs, rhs_r = v, reps, 1.0, ones
            s_min = 2.0 / math.sqrt(v) if v > 0 else math.inf
            meta["nontrivial"] = s_min > _criteria.CV_BENCHMARK_S
            meta["s_min_se"] = float(np.std(2.0 / np.sqrt(np.clip(reps, 1e-300, None)), ddof=1))
    elif cid == "theorem1_cv":
        vx, rx = plain_var("x|xB")
        vp, rp = inferred("p|pB")
        lhs, lhs_r, rhs, rhs_r = math.sqrt(vx * vp), np.sqrt(rx * rp), 1.0, ones
    elif cid == "epr_product_cv":
        vx, rx = inferred("x|xB")
        vp, rp = inferred("p|pB")
        lhs, lhs_r, rhs, rhs_r = vx * vp, rx * rp, 1.0, ones
    elif cid in ("spin_sscopic", "spin_sscopic_inferred"):
        vy, ry = inferred("jy|jyB") if cid == "spin_sscopic_inferred" else plain_var("jy|jyB")
        mz, ciz = estimate_mean(need("jz|jzB"), n_boot)
        lhs, lhs_r, rhs, rhs_r = vy, ry, mz * mz, ciz.replicates**2
        meta["jz_mean"] = mz
        if abs(mz) <= _criteria.ZERO_VARIANCE:
            s_min = 0.0
            meta["vacuous_bound"] = True
        elif vy <= _criteria.ZERO_VARIANCE:
            raise EstimationError("estimated J_Y variance is zero; size bound is unbounded")
        else:
            s_min = abs(mz) / math.sqrt(vy)
    elif cid == "theorem1_spin":
        vx, rx = plain_var("jx|jxB")
        vy, ry = inferred("jy|jyB")
        cz, rz = c_inf("jz|jyB")
        lhs, lhs_r, rhs, rhs_r = math.sqrt(vx * vy), np.sqrt(rx * ry), cz / 2, rz / 2
    elif cid in ("epr_product_spin", "epr_product_spin_uninf_rhs"):
        vx, rx = inferred("jx|jxB")
        vy, ry = inferred("jy|jyB")
        lhs, lhs_r = vx * vy, rx * ry
        if cid == "epr_product_spin":
            c1, r1 = c_inf("jz|jxB")
            c2, r2 = c_inf("jz|jyB")
            rhs, rhs_r = max(c1, c2) ** 2 / 4, np.maximum(r1, r2) ** 2 / 4
        else:
            mz, ciz = estimate_mean(need("jz|jzB"), n_boot)
            rhs, rhs_r = mz * mz / 4, ciz.replicates**2 / 4
    elif cid == "epr_sum_spin":
        if bound is None:
            raise MissingStatisticError("epr_sum_spin needs the bound D (j/2)")
        parts = [inferred(s) for s in ("jx|jxB", "jy|jyB", "jz|jzB")]
        lhs = sum(p[0] for p in parts)
        lhs_r = sum(p[1] for p in parts)
        rhs, rhs_r = float(bound), bound * ones
    else:  # pragma: no cover
        raise AssertionError(cid)

    ci = _combine(lhs, lhs_r, rhs, rhs_r)
    meta["lhs_se"] = float(np.std(lhs_r, ddof=1))
    meta["n_boot"] = n_boot
    return make_report(cid, lhs, rhs, method="sampled", ci=ci, s_min=s_min, metadata=meta)
