import numpy as np
import pytest

import fastexit as fx
from fastexit.operator import Field
from conftest import build_model


def _ball(op, r=0.25):
    return fx.build_domain({"kind": "quadratic", "scale": 1.0}, r, op)


def test_build_domain_constant_section(ref_op):
    dom = _ball(ref_op, 0.25)
    assert dom.constant_section == pytest.approx((-0.5, 0.5), abs=1e-12)
    assert dom.invariance_report.monotone_passed
    assert dom.invariance_report.jensen_passed
    with pytest.raises(ValueError):
        fx.build_domain({"kind": "quadratic", "scale": 1.0, "center": 1.0}, 0.5, ref_op)


def test_membership_is_squared_norm_for_quadratic(ref_op):
    dom = _ball(ref_op, 0.25)
    rng = np.random.Generator(np.random.Philox(key=31))
    c = rng.standard_normal(ref_op.n_modes)
    g = fx.membership_values(dom, c[None, :])[0]
    assert g == pytest.approx(float((c**2).sum()), rel=1e-12)


def test_semigroup_shrinks_membership(ref_op):
    dom = _ball(ref_op, 0.25)
    x = np.zeros(ref_op.n_modes)
    x[1] = 0.4
    for t in (0.01, 0.1, 1.0):
        xt = np.exp(-ref_op.eigenvalues * t) * x
        g = fx.membership_values(dom, xt[None, :])[0]
        assert g == pytest.approx(0.16 * np.exp(-2 * np.pi**2 * t), rel=1e-10)
        assert g <= 0.16 + 1e-15


def test_jensen_step(ref_op):
    dom = _ball(ref_op, 0.25)
    rng = np.random.Generator(np.random.Philox(key=32))
    for _ in range(20):
        c = rng.standard_normal(ref_op.n_modes)
        c *= 0.45 / np.linalg.norm(c)
        mean = c[0]  # <x, mu> for the reference operator
        assert ref_op.domain_length * dom.g_convex.value(mean) <= fx.membership_values(dom, c[None, :])[0]


def test_first_exit_censored_for_attracting_flow(ref_op):
    model, cs, sq, sb = build_model(ref_op)
    dom = _ball(ref_op, 0.25)
    params = fx.MultiscaleParams(eps=0.05, alpha=0.0, beta=0.0, rho_bar=1.0)
    traj = fx.solve_spde(ref_op, cs, sq, sb, params, ref_op.constant_field(0.4), 2.0, 1e-2,
                         fx.RngStream(1))
    ev = fx.first_exit_time(traj, dom)
    assert ev.censored and ev.tau == pytest.approx(2.0)


def test_first_exit_interpolated_ramp(ref_op):
    dom = _ball(ref_op, 0.25)
    times = np.arange(0, 1.0001, 0.04)
    states = np.zeros((len(times), ref_op.n_modes))
    states[:, 0] = times
    traj = fx.FieldTrajectory(times=times, states=states)
    ev = fx.first_exit_time(traj, dom)
    assert not ev.censored
    assert ev.tau == pytest.approx(0.5, abs=2e-3)  # G = t^2 crosses 0.25 at 0.5
    assert ev.boundary_state is not None
    bigger = fx.first_exit_time(traj, _ball(ref_op, 0.36))
    assert bigger.tau > ev.tau  # nested level sets


def test_first_exit_requires_interior_start(ref_op):
    dom = _ball(ref_op, 0.25)
    times = np.array([0.0, 0.1])
    states = np.full((2, ref_op.n_modes), 0.0)
    states[:, 0] = 0.9
    with pytest.raises(ValueError):
        fx.first_exit_time(fx.FieldTrajectory(times=times, states=states), dom)


def test_exit_hypotheses_reference_passes(ref_op, exit_reference):
    model, *_ = exit_reference
    dom = _ball(ref_op, 0.25)
    rep = fx.check_exit_hypotheses(model, dom)
    assert rep.passed and rep.flow_witness is None
    assert rep.g_sup_bound == 1.0


def test_exit_hypotheses_repelling_flow_fails(ref_op):
    model, *_ = build_model(
        ref_op, f_spec={"kind": "linear", "slope": 1.0},
        q_spec={"kind": "flat", "value": np.sqrt(2.0)},
    )
    dom = _ball(ref_op, 0.25)
    rep = fx.check_exit_hypotheses(model, dom)
    assert not rep.passed
    assert not (rep.flow_contained_passed and rep.flow_attracted_passed)
    assert rep.flow_witness is not None


def test_exit_hypotheses_unbounded_gain_fails(ref_op):
    model, *_ = build_model(ref_op, g_spec={"kind": "linear", "slope": 1.0, "offset": 1.0})
    dom = _ball(ref_op, 0.25)
    rep = fx.check_exit_hypotheses(model, dom)
    assert not rep.g_bounded_passed and not rep.passed


def _reference_levels():
    levels = []
    for gamma in (0.25, 0.0625):
        a = np.sqrt(gamma) / 2
        levels.append(fx.MultiscaleParams(eps=gamma**2, alpha=a, beta=a, rho_bar=1.0))
    return levels


def test_exit_mc_deterministic_and_thread_independent(ref_op, exit_reference):
    model, *_ = exit_reference
    dom = _ball(ref_op, 0.25)
    x = ref_op.constant_field(0.0)
    levels = _reference_levels()[:1]
    kw = dict(n_paths=96, dt=0.01, seed=5)
    s1 = fx.exit_time_mc(model, levels, dom, x, **kw, threads=1)
    s2 = fx.exit_time_mc(model, levels, dom, x, **kw, threads=3)
    assert np.array_equal(s1[0].taus, s2[0].taus)
    s3 = fx.exit_time_mc(model, levels, dom, x, **kw, threads=1)
    assert np.array_equal(s1[0].taus, s3[0].taus)
    assert s1[0].v_bar_target == pytest.approx(0.25, rel=1e-10)
    assert s1[0].n_censored == 0
    assert s1[0].gamma_log_mean == pytest.approx(0.25 * np.log(s1[0].mean_tau), rel=1e-14)


def test_exit_mc_level_nesting_pathwise(ref_op, exit_reference):
    model, *_ = exit_reference
    x = ref_op.constant_field(0.0)
    levels = _reference_levels()[:1]
    small = fx.exit_time_mc(model, levels, _ball(ref_op, 0.16), x, n_paths=64, dt=0.01, seed=6,
                            t_max=200.0)
    big = fx.exit_time_mc(model, levels, _ball(ref_op, 0.25), x, n_paths=64, dt=0.01, seed=6,
                          t_max=200.0)
    assert np.all(small[0].taus <= big[0].taus)


def test_exit_mc_censoring_consistency(ref_op, exit_reference):
    model, *_ = exit_reference
    dom = _ball(ref_op, 0.25)
    x = ref_op.constant_field(0.0)
    levels = _reference_levels()[:1]
    short = fx.exit_time_mc(model, levels, dom, x, n_paths=64, dt=0.01, seed=7, t_max=1.0)
    longer = fx.exit_time_mc(model, levels, dom, x, n_paths=64, dt=0.01, seed=7, t_max=4.0)
    s, l = short[0], longer[0]
    done = ~np.isclose(s.taus, s.t_max)
    assert np.array_equal(s.taus[done], l.taus[done])  # concrete times unchanged
    assert l.n_censored <= s.n_censored
    assert s.lower_bound_only


def test_exit_mc_all_censored_lower_bound_mode(ref_op):
    model, *_ = build_model(ref_op, q_spec={"kind": "flat", "value": 1e-3},
                            b_spec={"kind": "list", "values": [1e-3, 1e-3]})
    dom = _ball(ref_op, 0.25)
    x = ref_op.constant_field(0.0)
    levels = [fx.MultiscaleParams(eps=0.01, alpha=0.05, beta=0.05, rho_bar=1.0)]
    stats = fx.exit_time_mc(model, levels, dom, x, n_paths=32, dt=0.01, seed=8, t_max=0.5)
    assert stats[0].lower_bound_only and stats[0].n_censored == 32
    assert stats[0].mean_tau == pytest.approx(stats[0].t_max)


def test_exit_mc_rejects_exterior_start(ref_op, exit_reference):
    model, *_ = exit_reference
    dom = _ball(ref_op, 0.25)
    with pytest.raises(ValueError):
        fx.exit_time_mc(model, _reference_levels()[:1], dom, ref_op.constant_field(0.9),
                        n_paths=8, dt=0.01, seed=9)


def test_exit_location_concentrates_on_constant_states(ref_op, exit_reference):
    model, *_ = exit_reference
    dom = _ball(ref_op, 0.25)
    x = ref_op.constant_field(0.0)
    stats = fx.exit_time_mc(model, _reference_levels(), dom, x, n_paths=128, dt=0.01, seed=10)
    f_big_gamma = stats[0].concentration_fraction
    f_small_gamma = stats[1].concentration_fraction
    n = 128
    se = np.sqrt(max(f_big_gamma * (1 - f_big_gamma), 0.01) / n)
    assert f_small_gamma >= f_big_gamma - 2 * se


def test_exit_mc_rho_ball_instrumentation(ref_op, exit_reference):
    model, *_ = exit_reference
    dom = _ball(ref_op, 0.25)
    x = ref_op.constant_field(0.3)
    stats = fx.exit_time_mc(model, _reference_levels()[:1], dom, x, n_paths=32, dt=0.01, seed=11,
                            rho_ball=0.1)
    st = stats[0]
    assert st.sigma_rho_times is not None
    assert np.all(st.sigma_rho_times <= st.taus + 1e-12)
    assert np.all(st.sigma_rho_times > 0)
