import numpy as np
import pytest

from hetnet_jpcs.chansim import Scenario, generate_instance
from hetnet_jpcs.jpcs import (greedy_matching, initial_power, run_bulk_as,
                              run_epa, run_jpcs, run_single_antenna,
                              scale_for_cross_tier)
from hetnet_jpcs.model import (NetworkInstance, active_tuples,
                               assignment_from_tuples, restrict_antennas,
                               scheduled_users)

from conftest import make_instance, tiny_config


def small_drop(seed=0, users=5, cells=2, subchannels=3, antennas=2):
    sc = Scenario(users_total=users, num_smallcells=cells,
                  num_subchannels=subchannels, num_antennas=antennas,
                  macro_radius_m=300.0, seed=seed)
    return generate_instance(sc)


def assert_report_clean(rep):
    assert rep.violations == []                    # C1/C2/C4..C9 all hold
    tr = rep.sumrate_trace
    for earlier, later in zip(tr, tr[1:]):
        assert later >= earlier - 1e-9
    if rep.qos_residual:
        assert "qos_infeasible" in rep.flags


def test_trivial_single_user_converges_fast():
    inst = make_instance(users=1, seed=2)
    cfg = tiny_config(i_th=1e3, r_min=0.0, eps_power=1e-6)
    rep = run_jpcs(inst, cfg)
    assert rep.converged
    assert rep.outer_iterations <= 3
    best_gain = float(inst.gain[0, 1:].max())
    expected = np.log2(1.0 + cfg.p_max * best_gain / inst.noise_power)
    assert rep.sum_rate == pytest.approx(expected, rel=1e-2)
    assert_report_clean(rep)


def test_greedy_matching_structure():
    inst = small_drop(seed=4)
    asg = greedy_matching(inst)
    assert scheduled_users(asg).sum() == min(inst.num_users,
                                             inst.num_smallcells * inst.num_subchannels)
    slots = [(b, m) for (_, b, m, _) in active_tuples(asg)]
    assert len(slots) == len(set(slots))


def test_initial_power_policies_feasible():
    inst = small_drop(seed=5)
    cfg = tiny_config(i_th=1e-12)
    asg = greedy_matching(inst)
    for pol in ("uniform", "full", "random"):
        p = initial_power(inst, asg, cfg, policy=pol)
        from hetnet_jpcs.model import check_feasibility
        viol = [v for v in check_feasibility(inst, asg, p, cfg)
                if v.constraint in ("C1", "C2")]
        assert viol == []
    with pytest.raises(ValueError):
        initial_power(inst, asg, cfg, policy="nope")


def test_scale_for_cross_tier_binding_case():
    inst = make_instance(users=1, seed=6)
    g0 = inst.gain[0, 0, 0, 0]
    asg = assignment_from_tuples(inst, [(0, 1, 0, 0)])
    i_th = 0.1 * 0.2 * g0
    levels = scale_for_cross_tier(inst, asg, np.array([0.2]), i_th)
    assert levels[0] * g0 == pytest.approx(i_th, rel=1e-12)


def test_monotone_trace_and_feasible_reports_small_scale():
    cfg = tiny_config(i_th=1e-12, r_min=2.0)
    for seed in range(3):
        rep = run_jpcs(small_drop(seed=seed), cfg)
        assert_report_clean(rep)
        assert rep.converged


def test_epa_single_user_matches_jpcs_when_cap_slack():
    inst = make_instance(users=1, seed=7)
    cfg = tiny_config(i_th=1e3, r_min=0.0, eps_power=1e-6)
    a = run_jpcs(inst, cfg)
    b = run_epa(inst, cfg)
    assert a.sum_rate == pytest.approx(b.sum_rate, rel=1e-3)


def test_epa_binding_cap_scales_power():
    inst = make_instance(users=1, seed=8)
    g0 = inst.gain[0, 0, 0, 0]
    gbest = float(inst.gain[0, 1:].max())
    cfg = tiny_config(i_th=0.01 * 0.2 * g0, r_min=0.0)
    rep = run_epa(inst, cfg)
    (i, b, m, a) = active_tuples(rep.assignment)[0]
    used = rep.power.p[i, b, m, a]
    assert used * inst.gain[i, 0, m, a] <= cfg.i_th * (1 + 1e-9)


def test_bulk_restriction_vacuous_with_one_antenna():
    inst = small_drop(seed=9, antennas=1)
    cfg = tiny_config(i_th=1e-12, r_min=0.0)
    a = run_jpcs(inst, cfg)
    b = run_bulk_as(inst, cfg)
    assert a.sum_rate == pytest.approx(b.sum_rate, rel=1e-9)


def test_bulk_assignment_shares_one_antenna_per_user():
    inst = small_drop(seed=10)
    cfg = tiny_config(i_th=1e-12, r_min=0.0)
    rep = run_bulk_as(inst, cfg)
    x = rep.assignment.x
    for i in range(inst.num_users):
        antennas = {int(np.argmax(x[i, m])) for m in range(inst.num_subchannels)}
        assert len(antennas) == 1
    assert_report_clean(rep)


def test_single_antenna_equals_jpcs_on_restricted_instance():
    inst = small_drop(seed=11)
    cfg = tiny_config(i_th=1e-12, r_min=0.0)
    a = run_single_antenna(inst, cfg)
    b = run_jpcs(restrict_antennas(inst, 1), cfg)
    assert a.sum_rate == pytest.approx(b.sum_rate, rel=1e-12)
    assert a.scheme == "single_antenna"


def test_empty_instance_reports_zero():
    inst = NetworkInstance(np.zeros((0, 3, 2, 2)), 1e-15)
    cfg = tiny_config()
    for runner in (run_jpcs, run_epa, run_bulk_as, run_single_antenna):
        rep = runner(inst, cfg)
        assert rep.sum_rate == 0.0
        assert rep.converged


def test_baseline_ordering_smoke():
    # expectation-level ordering over a few drops (the acceptance suite runs
    # the full Monte-Carlo comparison)
    cfg = tiny_config(i_th=1e-12, r_min=2.0)
    jp, ep, bu = [], [], []
    for seed in range(6):
        inst = small_drop(seed=seed)
        jp.append(run_jpcs(inst, cfg).sum_rate)
        ep.append(run_epa(inst, cfg).sum_rate)
        bu.append(run_bulk_as(inst, cfg).sum_rate)
    assert np.mean(jp) >= np.mean(ep)
    assert np.mean(jp) >= np.mean(bu) - 1e-9
