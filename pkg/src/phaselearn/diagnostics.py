"""Numerical checks of the structural assumptions behind the learner.

Five scans, each producing a :class:`DecayFit`:

* ``lieb_robinson_scan``  - operator-norm cost of truncating the generator to
  an enlarged region, as a function of the enlargement radius.
* ``mixing_scan``         - decay of a local expectation toward its
  steady-state value, as a function of time.
* ``ltqo_scan``           - local distinguishability of the steady states of
  the full and the regionally localized generators.
* ``compatibility_scan``  - a nested-region consistency check: the steady
  state of a larger region, restricted and evolved under a smaller region's
  generator, converges locally to the smaller region's steady state.
* ``stability_scan``      - response of an expectation value to a single-term
  perturbation placed at increasing distance from the observable.

Fits are weighted log-linear least squares (weights proportional to the
squared values, floor-clipped) on points above the numerical floor, with
bootstrap confidence intervals.  Envelope comparisons are one-sided: measured
curve below the certified-constant envelope, never asserted tight.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateSteadyStateError
from .lattice import (
    LocalObservable,
    Region,
    distance,
    embed,
    enlarge,
    l1_ball_volume,
)
from .lindblad import (
    DensityMatrix,
    ParamLindbladian,
    Superoperator,
    assemble,
    evolve,
    heisenberg_evolve,
    localize,
    partial_trace,
    steady_state,
    subfamily,
    trace_norm,
)

__all__ = [
    "SCAN_SITE_CAP",
    "DEFAULT_T_GRID",
    "DecayFit",
    "LRConstants",
    "fit_decay",
    "operator_norm",
    "certify_lr_constants",
    "lieb_robinson_scan",
    "mixing_scan",
    "ltqo_scan",
    "compatibility_scan",
    "stability_scan",
    "calibrate_constants",
]

SCAN_SITE_CAP = 8
DEFAULT_T_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)
FLOOR = 1e-12


@dataclass(frozen=True)
class DecayFit:
    """A decay curve with its weighted log-linear fit and bootstrap CI."""

    abscissa_label: str
    abscissa: tuple[float, ...]
    values: tuple[float, ...]
    errors: tuple[float, ...]
    rate: float
    prefactor: float
    r_squared: float
    rate_ci: tuple[float, float]
    n_boot: int
    envelope: tuple[float, ...] | None = None
    envelope_ok: bool | None = None
    all_below_floor: bool = False
    excluded: tuple[int, ...] = ()

    @property
    def passes(self) -> bool:
        """Positive decay certified: lower CI bound > 0, or an identically-zero curve."""
        return self.all_below_floor or self.rate_ci[0] > 0.0

    def to_json_dict(self) -> dict:
        d = asdict(self)
        d["passes"] = self.passes
        return d

    def csv_rows(self):
        env = self.envelope or [None] * len(self.values)
        for a, v, e, u in zip(self.abscissa, self.values, self.errors, env):
            yield a, v, e, u


def _wls_logfit(s: np.ndarray, v: np.ndarray) -> tuple[float, float, float]:
    """Weighted least squares of log v = log a - rate * s; returns (rate, a, R^2)."""
    w = np.clip(v, FLOOR, None) ** 2
    y = np.log(v)
    X = np.vstack([np.ones_like(s), -s]).T
    WX = X * w[:, None]
    coef = np.linalg.solve(X.T @ WX, WX.T @ y)
    resid = y - X @ coef
    ybar = np.sum(w * y) / np.sum(w)
    ss_res = float(np.sum(w * resid**2))
    ss_tot = float(np.sum(w * (y - ybar) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(coef[1]), float(math.exp(coef[0])), r2


def fit_decay(abscissa: Sequence[float], values: Sequence[float],
              errors: Sequence[float] | None = None, label: str = "time",
              floor: float = FLOOR, n_boot: int = 200, boot_seed: int = 0,
              envelope: Sequence[float] | None = None,
              excluded: Sequence[int] = ()) -> DecayFit:
    """Fit an exponential decay to the points above the numerical floor.

    Excluded indices (e.g. degenerate-kernel points) never enter the fit.
    With no point above the floor the curve is flagged ``all_below_floor`` and
    the rate is reported as 0 (a finite placeholder).
    """
    s = np.asarray(abscissa, dtype=float)
    v = np.asarray(values, dtype=float)
    err = np.zeros_like(v) if errors is None else np.asarray(errors, dtype=float)
    s_t, v_t, e_t = (tuple(map(float, a)) for a in (s, v, err))
    keep = np.ones(len(v), dtype=bool)
    keep[list(excluded)] = False
    mask = keep & np.isfinite(v) & (v > floor)
    env_ok = None
    if envelope is not None:
        env = np.asarray(envelope, dtype=float)
        env_ok = bool(np.all(v[keep] <= env[keep] + 1e-12))
    env_t = None if envelope is None else tuple(map(float, envelope))
    if mask.sum() == 0:
        return DecayFit(label, s_t, v_t, e_t, 0.0, 0.0, 0.0, (0.0, 0.0), n_boot,
                        env_t, env_ok, all_below_floor=True,
                        excluded=tuple(excluded))
    sm, vm = s[mask], v[mask]
    if len(np.unique(sm)) < 2:
        return DecayFit(label, s_t, v_t, e_t, 0.0, float(vm.max()), 0.0,
                        (0.0, 0.0), n_boot, env_t, env_ok,
                        all_below_floor=False, excluded=tuple(excluded))
    rate, pref, r2 = _wls_logfit(sm, vm)
    rng = np.random.default_rng(boot_seed)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(0, len(sm), size=len(sm))
        if len(np.unique(sm[idx])) < 2:
            continue
        b_rate, _, _ = _wls_logfit(sm[idx], vm[idx])
        boots.append(b_rate)
    if boots:
        lo, hi = np.percentile(boots, [2.5, 97.5])
    else:
        lo, hi = rate, rate
    return DecayFit(label, s_t, v_t, e_t, rate, pref, r2,
                    (float(lo), float(hi)), n_boot, env_t, env_ok,
                    all_below_floor=False, excluded=tuple(excluded))


def operator_norm(mat: np.ndarray, tol: float = 1e-9, max_iter: int = 10000,
                  seed: int = 7) -> float:
    """Largest singular value by power iteration on M^dag M."""
    rng = np.random.default_rng(seed)
    n = mat.shape[1]
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = mat.conj().T @ (mat @ v)
        nrm = float(np.linalg.norm(w))
        if nrm == 0.0:
            return 0.0
        new_sigma = math.sqrt(nrm)
        v = w / nrm
        if abs(new_sigma - sigma) <= tol * max(1.0, new_sigma):
            return new_sigma
        sigma = new_sigma
    return sigma


@dataclass(frozen=True)
class LRConstants:
    """Certified locality constants: velocity bound v at spatial rate mu."""

    mu: float
    v: float
    beta: float


def certify_lr_constants(family: ParamLindbladian, mu: float = 1.0) -> LRConstants:
    """Upper-bound the information velocity from the certified term strengths.

    v(mu) = 2 max_z sum_{terms whose covering ball reaches z}
            J_term |ball(r_term)| e^(mu r_term).

    Ancilla terms are charged to their anchor site.  beta is taken equal to mu
    (the envelopes stay one-sided upper bounds under this choice).
    """
    lat = family.lattice
    anchor_of = {a.slot: a.anchor for a in family.ancillas}
    worst = 0.0
    for z in lat.all_sites():
        total = 0.0
        for ti in range(len(family.terms)):
            c = family.term_centers[ti]
            c = anchor_of.get(c, c)
            r = family.term_radii[ti]
            if distance(lat, c, z) <= r:
                total += (family.term_strengths[ti]
                          * l1_ball_volume(r, lat.dim) * math.exp(mu * r))
        worst = max(worst, total)
    return LRConstants(mu=mu, v=2.0 * worst, beta=mu)


def _check_scan_size(family: ParamLindbladian) -> None:
    if family.n_total > SCAN_SITE_CAP:
        raise ValueError(f"scans cap the system at {SCAN_SITE_CAP} sites")


def lieb_robinson_scan(family: ParamLindbladian, x, x_prime, obs: LocalObservable,
                       t: float = 1.0, r_max: int | None = None,
                       rtol: float = 1e-8, n_boot: int = 200,
                       mu: float = 1.0, boot_seed: int = 0) -> DecayFit:
    """|| T_t^*(O) - T_t^{* A(r)}(O) ||_inf for r = 0..r_max.

    The localized generator carries x inside the r-enlargement of the
    observable support and x' outside.  The envelope is
    ||O|| |A| J (e^{vt} - 1 - vt) / v e^{-beta r} with certified (v, beta).
    """
    _check_scan_size(family)
    lat = family.lattice
    if r_max is None:
        r_max = max(distance(lat, u, v) for u in lat.all_sites() for v in lat.all_sites())
    consts = certify_lr_constants(family, mu)
    if consts.v * t > 700.0:
        raise ValueError(f"e^(vt) overflows for certified v={consts.v:.3g}, t={t}")
    O_full = embed(obs, lat, n_total=family.n_total)
    gen_full = assemble(family, x)
    O_t = heisenberg_evolve(gen_full, O_full, t, rtol=rtol)
    radii = list(range(r_max + 1))
    values = []
    for r in radii:
        patch = enlarge(lat, obs.support, r)
        hyb = localize(family, x, x_prime, patch)
        O_loc = heisenberg_evolve(assemble(family, hyb), O_full, t, rtol=rtol)
        values.append(operator_norm(O_t - O_loc))
    amp = (obs.operator_norm * len(obs.support) * family.J
           * (math.exp(consts.v * t) - 1.0 - consts.v * t) / consts.v)
    envelope = [amp * math.exp(-consts.beta * r) for r in radii]
    return fit_decay(radii, values, label="radius", n_boot=n_boot,
                     boot_seed=boot_seed, envelope=envelope)


def mixing_scan(family: ParamLindbladian, x, rho0: DensityMatrix,
                obs: LocalObservable, t_grid: Sequence[float] = DEFAULT_T_GRID,
                rtol: float = 1e-9, n_boot: int = 200,
                rho_inf: DensityMatrix | None = None,
                boot_seed: int = 0) -> DecayFit:
    """|tr[O (T_t(rho0) - rho_inf)]| on the time grid, with its decay rate."""
    _check_scan_size(family)
    gen = assemble(family, x)
    if rho_inf is None:
        rho_inf = steady_state(gen)
    O_full = embed(obs, family.lattice, n_total=family.n_total)
    target = float(np.real(np.trace(O_full @ rho_inf.data)))
    values = []
    current, t_prev = rho0, 0.0
    for t in t_grid:
        current = evolve(gen, current, t - t_prev, rtol=rtol)
        t_prev = t
        values.append(abs(float(np.real(np.trace(O_full @ current.data))) - target))
    return fit_decay(list(t_grid), values, label="time", n_boot=n_boot,
                     boot_seed=boot_seed)


def ltqo_scan(family: ParamLindbladian, x, x_prime, obs: LocalObservable,
              s_grid: Sequence[int], rtol: float = 1e-9, n_boot: int = 200,
              gamma_mix: float = 1.0, c_poly: float = 1.0, kappa: float = 1.0,
              mu: float = 1.0, boot_seed: int = 0) -> DecayFit:
    """|tr[O (rho_inf - rho_inf^{A(s)})]| against the localisation radius s.

    Points where the localized generator has a degenerate kernel are flagged
    and excluded from the fit.  The envelope is
    ||O|| (J |A| / v + c |A|^kappa) (|A(s)|/|A|)^(kappa v / (v+gamma)) e^{-beta' s}
    with beta' = beta gamma / (v + gamma).
    """
    _check_scan_size(family)
    lat = family.lattice
    gen = assemble(family, x)
    rho_inf = steady_state(gen)
    O_full = embed(obs, lat, n_total=family.n_total)
    base = float(np.real(np.trace(O_full @ rho_inf.data)))
    consts = certify_lr_constants(family, mu)
    values, excluded, envelope = [], [], []
    A = max(1, len(obs.support))
    beta_p = consts.beta * gamma_mix / (consts.v + gamma_mix)
    for i, s in enumerate(s_grid):
        patch = enlarge(lat, obs.support, int(s))
        vol_ratio = len(patch) / A
        envelope.append(
            obs.operator_norm * (family.J * A / consts.v + c_poly * A**kappa)
            * vol_ratio ** (kappa * consts.v / (consts.v + gamma_mix))
            * math.exp(-beta_p * s)
        )
        try:
            rho_s = steady_state(assemble(family, localize(family, x, x_prime, patch)))
        except DegenerateSteadyStateError:
            values.append(math.nan)
            excluded.append(i)
            continue
        values.append(abs(float(np.real(np.trace(O_full @ rho_s.data))) - base))
    return fit_decay(list(map(float, s_grid)), values, label="radius",
                     n_boot=n_boot, boot_seed=boot_seed, envelope=envelope,
                     excluded=excluded)


def compatibility_scan(family: ParamLindbladian, x, region_a: Region,
                       region_r: Region, region_w: Region,
                       t_grid: Sequence[float] = DEFAULT_T_GRID,
                       rtol: float = 1e-9, n_boot: int = 200,
                       boot_seed: int = 0) -> DecayFit:
    """Nested-region steady-state consistency.

    Evolves the restriction of the W-region steady state under the R-region
    generator and tracks the trace distance of its A-marginal from the
    R-region steady state.  Requires A inside R away from R's boundary, and R
    inside W away from W's boundary.
    """
    lat = family.lattice
    a_set, r_set, w_set = region_a.as_set(), region_r.as_set(), region_w.as_set()
    if not (a_set <= r_set and r_set <= w_set):
        raise ValueError("regions must nest: A within R within W")
    if a_set & region_r.boundary_sites(lat):
        raise ValueError("A must avoid the boundary of R")
    if r_set & region_w.boundary_sites(lat):
        raise ValueError("R must avoid the boundary of W")
    fam_w, map_w = subfamily(family, region_w)
    fam_r, map_r = subfamily(family, region_r)
    if fam_w.n_total > SCAN_SITE_CAP:
        raise ValueError(f"W region exceeds the scan cap of {SCAN_SITE_CAP} sites")
    xv = family.as_values(x)
    rho_w = steady_state(assemble(fam_w, xv[map_w]))
    gen_r = assemble(fam_r, xv[map_r])
    rho_r = steady_state(gen_r)
    w_sites = list(region_w.sites)
    r_pos_in_w = [w_sites.index(s) for s in region_r.sites]
    r_sites = list(region_r.sites)
    a_pos_in_r = [r_sites.index(s) for s in region_a.sites]
    sigma = DensityMatrix(
        partial_trace(rho_w.data, len(w_sites), r_pos_in_w, lat.local_dim),
        len(r_sites), lat.local_dim,
    )
    target = partial_trace(rho_r.data, len(r_sites), a_pos_in_r, lat.local_dim)
    values, t_prev = [], 0.0
    for t in t_grid:
        sigma = evolve(gen_r, sigma, t - t_prev, rtol=rtol)
        t_prev = t
        marg = partial_trace(sigma.data, len(r_sites), a_pos_in_r, lat.local_dim)
        values.append(trace_norm(marg - target))
    return fit_decay(list(t_grid), values, label="time", n_boot=n_boot,
                     boot_seed=boot_seed)


def stability_scan(family: ParamLindbladian, x, delta: float,
                   obs: LocalObservable, rho0: DensityMatrix,
                   t_checks: Sequence[float] = (1.0, 2.0, 4.0),
                   rtol: float = 1e-9, n_boot: int = 200,
                   mu: float = 1.0, gamma_mix: float = 1.0,
                   c_poly: float = 1.0, kappa: float = 1.0,
                   boot_seed: int = 0) -> DecayFit:
    """|f_O(L, t) - f_O(L + E, t)| for a single-coordinate kick at distance d.

    For every available distance d from the observable support, the lowest
    parameter coordinate owned by a term at that distance is shifted by
    ``delta`` (an error if that leaves the box).  The reported value at d is
    the maximum over the (three) check times, so the fit certifies a bound
    uniform in t.  The envelope composes the certified short-time and
    mixing-tail bounds through h(d) = e^{-mu d / 2} + (1/gamma) e^{-gamma t0(d)}
    with t0(d) = (mu/2) (log(v^2 / 2) / v) d.
    """
    _check_scan_size(family)
    lat = family.lattice
    xv = family.as_values(x)
    obs_sites = list(obs.support.sites)
    by_distance: dict[int, int] = {}
    for ci, info in enumerate(family.coord_info):
        sites = [s for s in info.support if s < family.n_system]
        if not sites:
            continue
        d = min(min(distance(lat, s, o) for o in obs_sites) for s in sites)
        if d not in by_distance or ci < by_distance[d]:
            by_distance[d] = ci
    O_full = embed(obs, lat, n_total=family.n_total)
    gen0 = assemble(family, x)

    def f_curve(gen: Superoperator) -> np.ndarray:
        out, current, t_prev = [], rho0, 0.0
        for t in t_checks:
            current = evolve(gen, current, t - t_prev, rtol=rtol)
            t_prev = t
            out.append(float(np.real(np.trace(O_full @ current.data))))
        return np.asarray(out)

    base_curve = f_curve(gen0)
    consts = certify_lr_constants(family, mu)
    distances = sorted(by_distance)
    values, envelope = [], []
    t_max = max(t_checks)
    for d in distances:
        ci = by_distance[d]
        kicked = xv.copy()
        kicked[ci] += delta
        if abs(kicked[ci]) > 1.0:
            raise ValueError(
                f"perturbation pushes coordinate {ci} to {kicked[ci]:.3f}, outside [-1, 1]"
            )
        curve = f_curve(assemble(family, kicked))
        values.append(float(np.max(np.abs(curve - base_curve))))
        # perturbation strength surrogate: triangle bound from the two term builds
        ti = family.coord_info[ci].term_index
        e_bound = 2.0 * family.term_strengths[ti]
        t0 = (mu / 2.0) * (math.log(max(consts.v**2 / 2.0, 1.0 + 1e-9)) / consts.v) * d
        h = math.exp(-mu * d / 2.0)
        if t_max > t0:
            h += (1.0 / gamma_mix) * math.exp(-gamma_mix * t0)
        envelope.append(e_bound * obs.operator_norm * c_poly
                        * max(1, len(obs.support)) ** kappa * h)
    return fit_decay(list(map(float, distances)), values, label="distance",
                     n_boot=n_boot, boot_seed=boot_seed, envelope=envelope)


def calibrate_constants(family: ParamLindbladian, x, x_prime,
                        obs: LocalObservable, rho0: DensityMatrix,
                        t_grid: Sequence[float] = DEFAULT_T_GRID,
                        t_lr: float = 1.0, rtol: float = 1e-8,
                        kappa: float = 1.0) -> dict:
    """Measure (gamma', c', mu, xi) from the mixing and localisation scans.

    1/xi = min(fitted mixing rate, fitted spatial rate / 2); c' is the
    smallest constant putting the measured mixing curve under
    c' |A|^kappa e^{-gamma' t}.  An identically-zero localisation curve (an
    on-site family) leaves the spatial rate unconstrained.
    """
    mix = mixing_scan(family, x, rho0, obs, t_grid, rtol=max(rtol, 1e-9))
    gamma_p = mix.rate if not mix.all_below_floor and mix.rate > 0 else 1.0
    A = max(1, len(obs.support))
    c_prime = 1.0
    for t, v in zip(mix.abscissa, mix.values):
        if v > FLOOR:
            c_prime = max(c_prime, v / (A**kappa * math.exp(-gamma_p * t)))
    lr = lieb_robinson_scan(family, x, x_prime, obs, t=t_lr, rtol=rtol)
    mu_fit = math.inf if lr.all_below_floor else max(lr.rate, FLOOR)
    inv_xi = min(gamma_p, mu_fit / 2.0)
    return {
        "gamma_prime": float(gamma_p),
        "c_prime": float(c_prime),
        "mu_fit": float(mu_fit),
        "xi": float(1.0 / inv_xi),
        "mixing_fit": mix,
        "lr_fit": lr,
    }
