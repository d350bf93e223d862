"""Nearest-patch learning: plan the run, select training cells, predict.

The planner turns target accuracies (epsilon, delta, delta') and model
constants into the run prescription (r, gamma, q, t_eps, N):

    r     = max(1, ceil(2 xi log(4 c' |A| J (D-1)! (2 xi)^(D-1) D^(D-1) [f(n)]
                         / (eps e^(1/2xi) (1 - e^(-1/2xi))))))
    gamma = eps / (2 [2(r+k0)]^D J ell)            (steady / general)
          = eps / (3 [2(r+k0)]^D J (ell+1))        (slow mixing)
    q     = ceil((8 12^k0 / (3 eps^2)) log(n^k0 2^(k0+1) / delta'))
    t_eps = (1/gamma') log(6 c' |A|^kappa / eps)   (general)
          = (1/gamma') log(3 f(n) / eps)           (slow mixing)
    m_r   = [2(r+r0+k0)]^D ell
    N     = q (2/gamma)^m_r (log(M/delta) + m_r log(2/gamma) + log q)
    N     = W q (t_eps/gamma) (2/gamma)^m_r
            (log(M/delta) + m_r log(2/gamma) + log(t_eps/gamma) + log q)
                                                   (general / slow mixing)

f(n) enters r, t_eps only in slow-mixing mode.  |A| is the l1 ball volume of
radius k0.  All logs are natural.

Prediction restricts both the target point and the training tags to the
coordinates of Lindbladian terms meeting the r-enlarged observable support,
keeps the samples within l-infinity distance gamma (and within gamma in time
outside steady-state mode), and takes a median of means of the per-snapshot
estimates.  An empty cell degrades to the single nearest sample with a
warning.  Ties break toward the lowest sample index everywhere.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyCellError, PlanInfeasibleError
from .lattice import LocalObservable, Region, enlarge, l1_ball_volume
from .lindblad import ParamLindbladian
from .models import PhaseSample
from .shadows import (
    TrainingSet,
    median_of_means,
    mom_batch_count,
    required_shadow_count,
    snapshot_local_matrix,
)

__all__ = [
    "MODES",
    "PlanConstants",
    "LearnerPlan",
    "Prediction",
    "plan",
    "nearest_patch",
    "select_cell",
    "predict",
    "predict_from_states",
    "coverage_report",
    "CoverageReport",
    "RegionCoverage",
]

MODES = ("steady_state", "general_phase", "slow_mixing")


@dataclass(frozen=True)
class PlanConstants:
    """Structural and calibrated constants feeding the plan formulas.

    J, ell, r0, D, n, m come from the model; xi, gamma_prime, c_prime are
    measured by the diagnostics (1/xi = min(fitted mixing rate, fitted spatial
    rate / 2)); kappa is the poly(|A|) exponent (default 1); f_n is the
    slow-mixing prefactor.
    """

    J: float
    ell: int
    r0: int
    D: int
    n: int
    m: int
    k0: int = 1
    M: int = 1
    W: int = 1
    xi: float = 1.0
    gamma_prime: float = 1.0
    c_prime: float = 1.0
    kappa: float = 1.0
    f_n: float | None = None

    @property
    def ball_volume_k0(self) -> int:
        return l1_ball_volume(self.k0, self.D)


@dataclass(frozen=True)
class LearnerPlan:
    epsilon: float
    delta: float
    delta_prime: float
    mode: str
    r: int
    gamma: float
    q: int
    t_eps: float | None
    N: int
    N_log2: float
    capped: bool
    n_cap: int | None
    mom_batches: int
    constants: PlanConstants

    @property
    def m_r(self) -> int:
        c = self.constants
        return (2 * (self.r + c.r0 + c.k0)) ** c.D * c.ell

    def to_json(self) -> str:
        obj = asdict(self)
        obj["m_r"] = self.m_r
        obj["t_eps"] = None if self.t_eps is None else float(self.t_eps)
        return json.dumps(obj, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "LearnerPlan":
        obj = json.loads(text)
        obj.pop("m_r", None)
        consts = PlanConstants(**obj.pop("constants"))
        return LearnerPlan(constants=consts, **obj)

    def recomputed(self) -> "LearnerPlan":
        """Re-derive the plan from its own targets and constants."""
        return plan(self.epsilon, self.delta, self.delta_prime, self.constants,
                    self.mode, n_cap=self.n_cap)


def plan(epsilon: float, delta: float, delta_prime: float,
         constants: PlanConstants, mode: str = "steady_state",
         n_cap: int | None = None) -> LearnerPlan:
    """Derive (r, gamma, q, t_eps, N) from the closed-form prescriptions.

    Raises PlanInfeasibleError when the prescribed N overflows 2**63 and no
    cap was supplied; with ``n_cap`` the prescription is recorded in log2 form
    and the capped N is used (coverage_report quantifies the shortfall).
    """
    for name, val in (("epsilon", epsilon), ("delta", delta), ("delta_prime", delta_prime)):
        if not (0.0 < val < 1.0):
            raise ValueError(f"{name} must lie in (0, 1), got {val}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    c = constants
    if c.J <= 0 or c.xi <= 0 or c.gamma_prime <= 0 or c.c_prime <= 0:
        raise ValueError("J, xi, gamma_prime, c_prime must be positive")
    slow = mode == "slow_mixing"
    if slow and (c.f_n is None or c.f_n <= 0):
        raise ValueError("slow-mixing mode requires a positive f_n")

    A = c.ball_volume_k0
    two_xi = 2.0 * c.xi
    numer = (4.0 * c.c_prime * A * c.J * math.factorial(c.D - 1)
             * two_xi ** (c.D - 1) * float(c.D) ** (c.D - 1))
    if slow:
        numer *= c.f_n
    denom = epsilon * math.exp(1.0 / two_xi) * (1.0 - math.exp(-1.0 / two_xi))
    r = max(1, math.ceil(two_xi * math.log(numer / denom)))

    if slow:
        gamma = epsilon / (3.0 * (2.0 * (r + c.k0)) ** c.D * c.J * (c.ell + 1))
    else:
        gamma = epsilon / (2.0 * (2.0 * (r + c.k0)) ** c.D * c.J * c.ell)
    gamma = min(gamma, 1.0 - 1e-12)

    q = required_shadow_count(epsilon, delta_prime, c.k0, c.n)
    m_r = (2 * (r + c.r0 + c.k0)) ** c.D * c.ell

    t_eps: float | None = None
    if mode == "general_phase":
        t_eps = (1.0 / c.gamma_prime) * math.log(6.0 * c.c_prime * A**c.kappa / epsilon)
    elif slow:
        t_eps = (1.0 / c.gamma_prime) * math.log(3.0 * c.f_n / epsilon)

    log_ratio = math.log(2.0 / gamma)
    bracket = math.log(c.M / delta) + m_r * log_ratio + math.log(q)
    log2_n = math.log2(q) + m_r * math.log2(2.0 / gamma)
    if mode != "steady_state":
        assert t_eps is not None
        if t_eps <= gamma:
            raise ValueError(
                f"time horizon t_eps = {t_eps:.3g} does not exceed the cell "
                f"width gamma = {gamma:.3g}; constants sit outside the "
                "prescription's regime"
            )
        bracket += math.log(t_eps / gamma)
        log2_n += math.log2(c.W) + math.log2(t_eps / gamma)
    if bracket <= 0:
        raise ValueError("sample-count bracket is nonpositive; targets/constants "
                         "outside the prescription's regime")
    log2_n += math.log2(bracket)

    if log2_n < 63.0:
        scale = q * (2.0 / gamma) ** m_r
        if mode != "steady_state":
            scale *= c.W * (t_eps / gamma)
        n_exact = max(1, math.ceil(scale * bracket))
    else:
        n_exact = None

    if n_exact is None and n_cap is None:
        raise PlanInfeasibleError(log2_n)
    if n_cap is not None and (n_exact is None or n_exact > n_cap):
        n_used, capped = int(n_cap), True
    else:
        n_used, capped = int(n_exact), False

    return LearnerPlan(
        epsilon=epsilon, delta=delta, delta_prime=delta_prime, mode=mode,
        r=r, gamma=gamma, q=q, t_eps=t_eps, N=n_used, N_log2=log2_n,
        capped=capped, n_cap=n_cap,
        mom_batches=math.ceil(8.0 * math.log(2.0 / delta_prime)),
        constants=c,
    )


def _restricted_distances(x_values: np.ndarray, t: float, training: TrainingSet,
                          indices: np.ndarray, mode: str) -> np.ndarray:
    """l-infinity distance of each training tag from (x restricted, t)."""
    if len(training) == 0:
        return np.zeros(0)
    if indices.size:
        diff = np.abs(training.X[:, indices] - x_values[indices][None, :])
        dist = diff.max(axis=1)
    else:
        dist = np.zeros(len(training))
    if mode != "steady_state":
        dist = np.maximum(dist, np.abs(training.taus - t))
    return dist


def nearest_patch(x_values: np.ndarray, t: float, training: TrainingSet,
                  indices: np.ndarray, mode: str = "steady_state",
                  omega: int = 0) -> tuple[int, float]:
    """Index of the sample closest to the target on the restricted coordinates.

    Outside steady-state mode the distance includes |tau - t|.  Ties resolve
    to the lowest sample index.
    """
    if len(training) == 0:
        raise EmptyCellError("training set is empty")
    mask = training.omegas == omega
    if not mask.any():
        raise EmptyCellError(f"no training samples with ancilla choice {omega}")
    dist = _restricted_distances(x_values, t, training, indices, mode)
    dist = np.where(mask, dist, np.inf)
    idx = int(np.argmin(dist))
    return idx, float(dist[idx])


def select_cell(x_values: np.ndarray, t: float, training: TrainingSet,
                indices: np.ndarray, gamma: float, mode: str = "steady_state",
                omega: int = 0) -> np.ndarray:
    """All sample indices within restricted distance gamma (may be empty)."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if len(training) == 0:
        return np.zeros(0, dtype=int)
    dist = _restricted_distances(x_values, t, training, indices, mode)
    ok = (dist <= gamma) & (training.omegas == omega)
    return np.nonzero(ok)[0]


@dataclass(frozen=True)
class Prediction:
    """Estimator output: total value, per-term contributions, provenance."""

    value: float
    per_term: tuple[float, ...]
    counts: tuple[int, ...]
    mom_batches: tuple[int, ...]
    warnings: tuple[str, ...]
    mode: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def predict(observables: Sequence[LocalObservable], x, t: float,
            training: TrainingSet, plan_: LearnerPlan, family: ParamLindbladian,
            omega: int = 0, mom_batches: int | None = None) -> Prediction:
    """Nearest-patch median-of-means prediction of sum_i tr[O_i rho(x, t)].

    Per term: enlarge the support by the patch radius r, select the gamma-cell
    of training samples on the restricted coordinates, evaluate each selected
    snapshot's inverse-channel estimate, and take a median of means.  Empty
    cells fall back to the single nearest sample and are flagged.
    """
    if len(training) == 0:
        raise EmptyCellError("training set is empty")
    x_values = family.as_values(x)
    lattice = family.lattice
    per_term: list[float] = []
    counts: list[int] = []
    ks: list[int] = []
    warnings: list[str] = []
    for obs in observables:
        patch = enlarge(lattice, obs.support, plan_.r)
        indices = family.coords_for_region(patch)
        cell = select_cell(x_values, t, training, indices, plan_.gamma,
                           plan_.mode, omega)
        if cell.size == 0:
            idx, dist = nearest_patch(x_values, t, training, indices,
                                      plan_.mode, omega)
            warnings.append(
                f"empty cell for {obs.label or obs.support.sites}; "
                f"nearest sample {idx} at distance {dist:.3g}"
            )
            cell = np.array([idx], dtype=int)
        sites = obs.support.sites
        vals = [
            float(np.real(np.trace(obs.matrix @ snapshot_local_matrix(
                training.snapshots[j], sites))))
            for j in cell
        ]
        if mom_batches is not None:
            k = max(1, min(mom_batches, len(vals)))
        else:
            k = mom_batch_count(plan_.delta_prime, len(vals))
        per_term.append(median_of_means(vals, k))
        counts.append(len(vals))
        ks.append(k)
    return Prediction(
        value=float(sum(per_term)),
        per_term=tuple(per_term),
        counts=tuple(counts),
        mom_batches=tuple(ks),
        warnings=tuple(warnings),
        mode=plan_.mode,
    )


def predict_from_states(observables: Sequence[LocalObservable], x, t: float,
                        samples: Sequence[PhaseSample],
                        value_fn: Callable[[np.ndarray, float, LocalObservable], float],
                        plan_: LearnerPlan, family: ParamLindbladian,
                        omega: int = 0) -> Prediction:
    """Exact-state variant of the estimator (no shadows).

    Per term, picks the nearest sample on the restricted coordinates and
    evaluates tr[O_i rho(sample)] through ``value_fn``; used to check the
    estimator's bias separately from shadow noise.
    """
    if not samples:
        raise EmptyCellError("no samples")
    X = np.vstack([s.x for s in samples])
    taus = np.array([s.tau for s in samples])
    omegas = np.array([s.omega for s in samples], dtype=int)
    x_values = family.as_values(x)
    per_term = []
    for obs in observables:
        patch = enlarge(family.lattice, obs.support, plan_.r)
        indices = family.coords_for_region(patch)
        if indices.size:
            dist = np.abs(X[:, indices] - x_values[indices][None, :]).max(axis=1)
        else:
            dist = np.zeros(len(samples))
        if plan_.mode != "steady_state":
            dist = np.maximum(dist, np.abs(taus - t))
        dist = np.where(omegas == omega, dist, np.inf)
        j = int(np.argmin(dist))
        per_term.append(value_fn(samples[j].x, samples[j].tau, obs))
    return Prediction(
        value=float(sum(per_term)),
        per_term=tuple(per_term),
        counts=tuple(1 for _ in per_term),
        mom_batches=tuple(1 for _ in per_term),
        warnings=(),
        mode=plan_.mode,
    )


@dataclass(frozen=True)
class RegionCoverage:
    sites: tuple[int, ...]
    m_r: int
    total_cells: float
    occupied: int
    covered: int
    fraction: float
    failure_bound: float


@dataclass(frozen=True)
class CoverageReport:
    gamma: float
    q: int
    n_samples: int
    entries: tuple[RegionCoverage, ...]

    @property
    def min_fraction(self) -> float:
        return min((e.fraction for e in self.entries), default=0.0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "gamma": self.gamma,
                "q": self.q,
                "n_samples": self.n_samples,
                "min_fraction": self.min_fraction,
                "entries": [asdict(e) for e in self.entries],
            },
            sort_keys=True,
            indent=1,
        )


def coverage_report(training: TrainingSet, gamma: float,
                    regions: Sequence[Region], family: ParamLindbladian,
                    q: int = 1, mode: str = "steady_state",
                    t_eps: float | None = None) -> CoverageReport:
    """Occupancy of the gamma-cells of each region's restricted coordinates.

    A cell counts as covered when at least q samples land in it.  Unoccupied
    cells never qualify, so the exact fraction only needs the occupied-cell
    counter even when the cell count is astronomically large.  The reported
    failure bound is M exp(-N (gamma/2)^m_r + m_r log(2/gamma)), with the
    time axis folded in outside steady-state mode.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    N = len(training)
    axis_cells = math.ceil(2.0 / gamma)
    time_cells = 1
    if mode != "steady_state":
        if t_eps is None or t_eps <= 0:
            raise ValueError("coverage in general/slow mode needs t_eps")
        time_cells = math.ceil(t_eps / gamma)
    entries = []
    M = max(1, len(regions))
    for region in regions:
        indices = family.coords_for_region(region)
        m_r = int(indices.size)
        occupancy: Counter = Counter()
        for i, snap in enumerate(training.snapshots):
            key_coords = tuple(
                int(min(axis_cells - 1, math.floor((v + 1.0) / gamma)))
                for v in training.X[i, indices]
            )
            if mode != "steady_state":
                tkey = int(min(time_cells - 1, math.floor(snap.tau / gamma)))
                key_coords = key_coords + (tkey,)
            occupancy[key_coords] += 1
        covered = sum(1 for v in occupancy.values() if v >= q)
        log_total = m_r * math.log(axis_cells) + math.log(time_cells)
        if log_total < 45.0:
            total = float(axis_cells**m_r * time_cells)
        elif log_total < 700.0:
            total = math.exp(log_total)
        else:
            total = math.inf
        fraction = covered / total if math.isfinite(total) and total > 0 else 0.0
        cell_prob_log = m_r * math.log(gamma / 2.0)
        if mode != "steady_state":
            cell_prob_log += math.log(gamma / t_eps)
        exponent = -N * math.exp(cell_prob_log) + m_r * math.log(2.0 / gamma)
        if mode != "steady_state":
            exponent += math.log(t_eps / gamma)
        failure = min(1.0, M * math.exp(min(700.0, exponent)))
        entries.append(
            RegionCoverage(
                sites=tuple(region.sites),
                m_r=m_r,
                total_cells=total,
                occupied=len(occupancy),
                covered=covered,
                fraction=fraction,
                failure_bound=failure,
            )
        )
    return CoverageReport(gamma=gamma, q=q, n_samples=N, entries=tuple(entries))
