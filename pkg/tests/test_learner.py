import math
from dataclasses import replace

import numpy as np
import pytest

from phaselearn.errors import EmptyCellError, PlanInfeasibleError
from phaselearn.lattice import Lattice, Region, enlarge, observable_from_string
from phaselearn.learner import (
    LearnerPlan,
    PlanConstants,
    coverage_report,
    nearest_patch,
    plan,
    predict,
    predict_from_states,
    select_cell,
)
from phaselearn.models import PhaseSample, instantiate
from phaselearn.shadows import ShadowSnapshot, TrainingSet, median_of_means, snapshot_local_matrix

SMALL = PlanConstants(J=0.5, ell=1, r0=0, D=1, n=4, m=4, k0=0, M=1, W=1,
                      xi=0.3, gamma_prime=1.0, c_prime=0.5)


def _tag_training(xs, taus=None, omegas=None, m=None):
    """Training set with real tags and placeholder single-site snapshots."""
    n = len(xs)
    taus = [math.inf] * n if taus is None else taus
    omegas = [0] * n if omegas is None else omegas
    snaps = [
        ShadowSnapshot(np.array([2], dtype=np.int8), np.array([1], dtype=np.int8),
                       np.asarray(x, dtype=float), taus[i], omegas[i], i)
        for i, x in enumerate(xs)
    ]
    return TrainingSet(snaps, m=m if m is not None else len(xs[0]))


class TestPlan:
    def test_recompute_idempotent(self):
        p = plan(0.6, 0.1, 0.1, SMALL, "steady_state")
        assert p.recomputed() == p
        text = p.to_json()
        assert LearnerPlan.from_json(text) == p

    def test_positive_integers(self):
        for mode, fn in (("steady_state", None), ("general_phase", None),
                         ("slow_mixing", 3.0)):
            c = replace(SMALL, f_n=fn)
            p = plan(0.6, 0.1, 0.1, c, mode, n_cap=10**6)
            assert p.r >= 1 and p.q >= 1 and p.N >= 1
            assert 0.0 < p.gamma < 1.0

    def test_epsilon_halving_steps_radius(self):
        # halving epsilon adds exactly 2 xi log 2 to the pre-ceiling argument
        c = replace(SMALL, xi=1.4, c_prime=40.0)
        p1 = plan(0.4, 0.1, 0.1, c, "steady_state", n_cap=10**9)
        p2 = plan(0.2, 0.1, 0.1, c, "steady_state", n_cap=10**9)
        step = 2 * c.xi * math.log(2.0)
        assert p2.r - p1.r in (math.floor(step), math.ceil(step))

    def test_infeasible_without_cap(self):
        consts = PlanConstants(J=4.0, ell=1, r0=0, D=1, n=8, m=8, k0=1,
                               xi=1.0, gamma_prime=1.0, c_prime=2.0)
        with pytest.raises(PlanInfeasibleError) as err:
            plan(0.3, 0.1, 0.1, consts, "steady_state")
        assert err.value.log2_n > 63
        p = plan(0.3, 0.1, 0.1, consts, "steady_state", n_cap=10**5)
        assert p.capped and p.N == 10**5

    def test_slow_mixing_sample_shape(self):
        # log N grows polylogarithmically in f(n)/eps
        logs = []
        for f_n in (10.0, 10.0**2, 10.0**4):
            c = replace(SMALL, f_n=f_n)
            p = plan(0.5, 0.1, 0.1, c, "slow_mixing", n_cap=10**18)
            logs.append(p.N_log2)
        assert logs[0] < logs[1] < logs[2]
        # polylog shape: log N bounded by const * log^2(f/eps) in 1D
        for f_n, l2 in zip((10.0, 10.0**2, 10.0**4), logs):
            assert l2 <= 5.0 * math.log2(f_n / 0.5) ** 2 + 64

    def test_general_mode_has_time_horizon(self):
        p = plan(0.5, 0.1, 0.1, SMALL, "general_phase", n_cap=10**9)
        expect = (1.0 / SMALL.gamma_prime) * math.log(
            6.0 * SMALL.c_prime * 1**SMALL.kappa / 0.5
        )
        assert p.t_eps == pytest.approx(expect)
        assert plan(0.5, 0.1, 0.1, SMALL, "steady_state").t_eps is None

    def test_bad_targets_rejected(self):
        with pytest.raises(ValueError):
            plan(1.2, 0.1, 0.1, SMALL)
        with pytest.raises(ValueError):
            plan(0.5, 0.1, 0.1, SMALL, "slow_mixing")  # missing f_n

    def test_degenerate_regime_is_loud(self):
        # a huge measured mixing rate shrinks the horizon below the cell width
        c = replace(SMALL, gamma_prime=500.0, J=0.01)
        with pytest.raises(ValueError, match="regime"):
            plan(0.9, 0.5, 0.5, c, "general_phase", n_cap=10**6)


class TestNearestPatch:
    def test_exact_hit(self):
        rng = np.random.default_rng(0)
        xs = rng.uniform(-1, 1, size=(20, 6))
        tr = _tag_training(xs)
        idx, dist = nearest_patch(xs[7], math.inf, tr, np.arange(6))
        assert idx == 7 and dist == 0.0

    def test_tie_breaks_to_lowest_index(self):
        xs = [np.zeros(3), np.full(3, 0.5), np.full(3, 0.5)]
        tr = _tag_training(xs)
        idx, _ = nearest_patch(np.full(3, 0.5), math.inf, tr, np.arange(3))
        assert idx == 1

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(1)
        xs = rng.uniform(-1, 1, size=(100, 12))
        tr = _tag_training(xs)
        indices = np.array([0, 3, 4, 7, 8, 11])
        target = rng.uniform(-1, 1, 12)
        idx, dist = nearest_patch(target, math.inf, tr, indices)
        brute = min(
            range(100),
            key=lambda k: np.max(np.abs(xs[k][indices] - target[indices])),
        )
        assert idx == brute
        assert dist == pytest.approx(np.max(np.abs(xs[brute][indices] - target[indices])))

    def test_argmin_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        xs = rng.uniform(-1, 1, size=(50, 5))
        tr = _tag_training(xs)
        indices = np.arange(5)
        target = rng.uniform(-1, 1, 5)
        idx, _ = nearest_patch(target, math.inf, tr, indices)
        dists = np.max(np.abs(xs[:, indices] - target[indices]), axis=1)
        for transform in (np.exp, np.sqrt, lambda d: 3 * d + 1):
            assert int(np.argmin(transform(dists))) == idx

    def test_general_mode_uses_time_axis(self):
        xs = [np.zeros(2), np.zeros(2)]
        tr = _tag_training(xs, taus=[0.1, 2.0])
        idx, _ = nearest_patch(np.zeros(2), 1.9, tr, np.arange(2), mode="general_phase")
        assert idx == 1

    def test_empty_training(self):
        tr = _tag_training([np.zeros(2)])
        with pytest.raises(EmptyCellError):
            nearest_patch(np.zeros(2), math.inf, tr, np.arange(2), omega=1)


class TestSelectCell:
    def test_gamma_two_selects_all(self):
        rng = np.random.default_rng(3)
        xs = rng.uniform(-1, 1, size=(40, 4))
        tr = _tag_training(xs)
        assert len(select_cell(rng.uniform(-1, 1, 4), math.inf, tr, np.arange(4), 2.0)) == 40

    def test_tiny_gamma_picks_duplicates(self):
        x = np.array([0.3, -0.4])
        xs = [x, x + 0.5, x.copy(), x - 0.7]
        tr = _tag_training(xs)
        got = select_cell(x, math.inf, tr, np.arange(2), 1e-12)
        assert list(got) == [0, 2]

    def test_selected_fraction_binomial(self):
        rng = np.random.default_rng(4)
        n, m_r, gamma = 10_000, 4, 0.5
        xs = rng.uniform(-1, 1, size=(n, m_r))
        tr = _tag_training(xs)
        got = select_cell(np.zeros(m_r), math.inf, tr, np.arange(m_r), gamma)
        p = gamma**m_r
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(len(got) - n * p) <= 3 * sigma

    def test_time_window_in_general_mode(self):
        xs = [np.zeros(1)] * 3
        tr = _tag_training(xs, taus=[0.1, 0.5, 3.0])
        got = select_cell(np.zeros(1), 0.4, tr, np.arange(1), 0.2, mode="general_phase")
        assert list(got) == [1]


def _pinning_training(n, N, seed, gamma_spread=None):
    lat = Lattice(1, (n,), "open")
    model = instantiate("pinning", lat)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1, 1, size=(N, n))
    from phaselearn.shadows import measure_snapshot_product
    from phaselearn.seeding import stream_seed

    snaps = []
    for i in range(N):
        sites = np.stack([model.oracle.site_state(xs[i, j], math.inf) for j in range(n)])
        snaps.append(measure_snapshot_product(sites, stream_seed(seed, "m", i),
                                              x=xs[i], tau=math.inf, omega=0))
    return model, TrainingSet(snaps, model_name="pinning", m=n, seed=seed)


class TestPredict:
    def _plan(self, model, r=1, gamma=0.3):
        sc = model.structural_constants()
        consts = PlanConstants(J=sc["J"], ell=sc["ell"], r0=sc["r0"], D=sc["D"],
                               n=sc["n"], m=sc["m"], k0=1)
        p = plan(0.3, 0.1, 0.1, consts, "steady_state", n_cap=10**6)
        return replace(p, r=r, gamma=gamma)

    def test_identity_term_contributes_exactly_one(self):
        model, tr = _pinning_training(4, 60, seed=5)
        p = self._plan(model)
        from phaselearn.lattice import LocalObservable

        ident = LocalObservable(Region((1,)), np.eye(2, dtype=complex), "I@1")
        pred = predict([ident], np.zeros(4), math.inf, tr, p, model.family)
        assert pred.value == pytest.approx(1.0, abs=1e-12)

    def test_duplicate_training_equals_plain_estimate(self):
        lat = Lattice(1, (3,), "open")
        model = instantiate("pinning", lat)
        x = np.array([0.2, -0.5, 0.8])
        from phaselearn.shadows import measure_snapshot_product

        sites = np.stack([model.oracle.site_state(x[j], math.inf) for j in range(3)])
        snaps = [measure_snapshot_product(sites, s, x=x, tau=math.inf) for s in range(200)]
        tr = TrainingSet(snaps, m=3)
        p = self._plan(model)
        obs = observable_from_string("Z@1", lat)
        pred = predict([obs], x, math.inf, tr, p, model.family)
        vals = [float(np.real(np.trace(obs.matrix @ snapshot_local_matrix(s, [1]))))
                for s in snaps]
        from phaselearn.shadows import mom_batch_count

        k = mom_batch_count(p.delta_prime, len(vals))
        assert pred.value == median_of_means(vals, k)
        assert pred.counts == (200,)

    def test_mom_batches_one_is_plain_mean(self):
        model, tr = _pinning_training(4, 300, seed=20)
        p = self._plan(model, r=1, gamma=0.5)
        obs = observable_from_string("Z@2", model.lattice)
        x = np.zeros(4)
        pred_mean = predict([obs], x, math.inf, tr, p, model.family, mom_batches=1)
        patch = enlarge(model.lattice, obs.support, p.r)
        cell = select_cell(x, math.inf, tr, model.family.coords_for_region(patch), p.gamma)
        vals = [float(np.real(np.trace(obs.matrix @ snapshot_local_matrix(
            tr.snapshots[j], [2])))) for j in cell]
        assert pred_mean.value == pytest.approx(np.mean(vals), abs=1e-12)
        assert pred_mean.mom_batches == (1,)

    def test_empty_cell_falls_back_with_warning(self):
        model, tr = _pinning_training(4, 5, seed=6)
        p = self._plan(model, gamma=1e-9)
        obs = observable_from_string("Z@2", model.lattice)
        pred = predict([obs], np.zeros(4), math.inf, tr, p, model.family)
        assert pred.warnings and pred.counts == (1,)

    def test_locality_scramble_invariance(self):
        # scrambling tags outside the patch coordinates changes nothing
        model, tr = _pinning_training(6, 400, seed=7)
        p = self._plan(model, r=1, gamma=0.4)
        obs = observable_from_string("Z@3", model.lattice)
        x = np.random.default_rng(8).uniform(-1, 1, 6)
        before = predict([obs], x, math.inf, tr, p, model.family)
        patch = enlarge(model.lattice, obs.support, p.r)
        inside = set(model.family.coords_for_region(patch).tolist())
        rng = np.random.default_rng(9)
        scrambled = []
        for s in tr.snapshots:
            new_x = s.x.copy()
            for c in range(6):
                if c not in inside:
                    new_x[c] = rng.uniform(-1, 1)
            scrambled.append(ShadowSnapshot(s.bases, s.outcomes, new_x, s.tau,
                                            s.omega, s.seed))
        tr2 = TrainingSet(scrambled, m=6)
        after = predict([obs], x, math.inf, tr2, p, model.family)
        assert before.value == after.value
        assert before.per_term == after.per_term

    def test_bias_bound_oracle_mode(self):
        # nearest-sample estimator with exact states obeys the certified
        # 2 C1 e^{-r/2xi} + C2(r) gamma envelope
        lat = Lattice(1, (6,), "open")
        model = instantiate("pinning", lat)
        sc = model.structural_constants()
        c = PlanConstants(J=sc["J"], ell=sc["ell"], r0=sc["r0"], D=sc["D"],
                          n=sc["n"], m=sc["m"], k0=1, xi=1.0, gamma_prime=1.0,
                          c_prime=1.5)
        p = replace(plan(0.3, 0.1, 0.1, c, "steady_state", n_cap=10**6),
                    r=1, gamma=0.4)
        rng = np.random.default_rng(10)
        samples = [PhaseSample(rng.uniform(-1, 1, 6), math.inf, 0) for _ in range(500)]
        obs = observable_from_string("Z@3", lat)
        two_xi = 2 * c.xi
        c1 = (4.0 * c.c_prime * c.ball_volume_k0 * c.J
              / (math.exp(1 / two_xi) * (1 - math.exp(-1 / two_xi))) / 4.0)
        c2 = (2.0 * (p.r + c.k0)) ** c.D * c.J * c.ell
        bound = 2 * c1 * math.exp(-p.r / two_xi) + c2 * p.gamma
        worst = 0.0
        for _ in range(25):
            xt = rng.uniform(-1, 1, 6)
            pred = predict_from_states(
                [obs], xt, math.inf, samples,
                lambda sx, tau, o: model.oracle_expectation(sx, tau, o),
                p, model.family,
            )
            worst = max(worst, abs(pred.value - model.oracle_expectation(xt, math.inf, obs)))
        assert worst <= bound

    def test_bias_shape_in_r_and_gamma(self):
        # median nearest-patch bias is non-increasing in r (within noise) on a
        # correlated family, and the cell-average bias shrinks with gamma on
        # the product family
        lat = Lattice(1, (5,), "open")
        tfim = instantiate("dissipative_tfim", lat, g=0.6, kappa=1.0)
        from phaselearn.lattice import embed
        from phaselearn.lindblad import assemble, steady_state

        obs = observable_from_string("Z@2", lat)
        O_full = embed(obs, lat)
        cache = {}

        def f_exact(x):
            key = x.tobytes()
            if key not in cache:
                cache[key] = steady_state(assemble(tfim.family, x)).expectation(O_full)
            return cache[key]

        rng = np.random.default_rng(11)
        samples = [PhaseSample(rng.uniform(-1, 1, tfim.family.m), math.inf, 0)
                   for _ in range(400)]
        sc = tfim.structural_constants()
        c = PlanConstants(J=sc["J"], ell=sc["ell"], r0=sc["r0"], D=sc["D"],
                          n=sc["n"], m=sc["m"], k0=1)
        base = plan(0.3, 0.1, 0.1, c, "steady_state", n_cap=10**6)
        tests = [rng.uniform(-1, 1, tfim.family.m) for _ in range(25)]
        exact_vals = [f_exact(x) for x in tests]
        medians = {}
        for r in (1, 2):
            p = replace(base, r=r)
            errs = [
                abs(predict_from_states([obs], xt, math.inf, samples,
                                        lambda sx, tau, o: f_exact(sx), p,
                                        tfim.family).value - ev)
                for xt, ev in zip(tests, exact_vals)
            ]
            medians[r] = float(np.median(errs))
        assert medians[2] <= medians[1] + 0.02

        pin = instantiate("pinning", Lattice(1, (6,), "open"))
        xs = rng.uniform(-1, 1, size=(50_000, 6))
        tr = _tag_training(list(xs))
        obs6 = observable_from_string("Z@3", pin.lattice)
        patch = enlarge(pin.lattice, obs6.support, 1)
        idx = pin.family.coords_for_region(patch)
        gamma_err = {}
        for gamma in (0.8, 0.4, 0.15):
            errs = []
            for xt in (rng.uniform(-1, 1, 6) for _ in range(40)):
                cell = select_cell(xt, math.inf, tr, idx, gamma)
                est = float(np.mean([
                    pin.oracle_expectation(xs[j], math.inf, obs6) for j in cell
                ]))
                errs.append(abs(est - pin.oracle_expectation(xt, math.inf, obs6)))
            gamma_err[gamma] = float(np.median(errs))
        assert gamma_err[0.15] <= gamma_err[0.4] <= gamma_err[0.8]


class TestCoverage:
    def test_large_sample_full_coverage(self):
        rng = np.random.default_rng(12)
        xs = rng.uniform(-1, 1, size=(20_000, 2))
        tr = _tag_training(list(xs))
        lat = Lattice(1, (2,), "open")
        model = instantiate("pinning", lat)
        rep = coverage_report(tr, 0.5, [Region((0, 1))], model.family, q=1)
        assert rep.entries[0].fraction == 1.0
        assert rep.entries[0].total_cells == 16

    def test_single_sample_covers_one_cell(self):
        lat = Lattice(1, (2,), "open")
        model = instantiate("pinning", lat)
        tr = _tag_training([np.array([0.1, 0.2])])
        rep = coverage_report(tr, 0.5, [Region((0, 1))], model.family, q=1)
        assert rep.entries[0].covered == 1
        assert rep.entries[0].fraction == 1 / 16

    def test_failure_bound_formula(self):
        lat = Lattice(1, (2,), "open")
        model = instantiate("pinning", lat)
        xs = [np.array([0.1, 0.2])] * 10
        tr = _tag_training(xs)
        gamma = 0.5
        rep = coverage_report(tr, gamma, [Region((0,))], model.family, q=1)
        m_r = 1
        expect = min(1.0, 1 * math.exp(-10 * (gamma / 2) ** m_r + m_r * math.log(2 / gamma)))
        assert rep.entries[0].failure_bound == pytest.approx(expect)
