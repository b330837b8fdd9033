import numpy as np
import pytest

from hetnet_jpcs import oracle
from hetnet_jpcs.model import (active_tuples, assignment_from_tuples,
                               check_feasibility, empty_assignment,
                               power_from_levels, rate, zero_power)
from hetnet_jpcs.scheduler import (SurrogateProblem, binariness_gap,
                                   build_surrogate, fractional_start,
                                   mm_schedule, mm_schedule_detailed, pack,
                                   pack_assignment, penalized_objective,
                                   rate_coefficients, round_assignment,
                                   solve_surrogate, unpack)

from conftest import make_instance, tiny_config


def scheduled_state(seed=3, users=2, cells=2, subchannels=2, antennas=2,
                    level=0.02):
    inst = make_instance(seed=seed, users=users, cells=cells,
                         subchannels=subchannels, antennas=antennas)
    tuples = []
    slot = 0
    for i in range(users):
        b = 1 + slot % cells
        m = (slot // cells) % subchannels
        tuples.append((i, b, m, i % antennas))
        slot += 1
    asg = assignment_from_tuples(inst, tuples)
    p = power_from_levels(inst, asg, np.full(users, level))
    return inst, asg, p


def test_rate_coefficients_zero_power_zero_rates(inst2x2):
    asg = assignment_from_tuples(inst2x2, [(0, 1, 0, 0)])
    rc = rate_coefficients(inst2x2, asg, zero_power(inst2x2))
    assert np.all(rc.rbar == 0.0)


def test_rate_coefficients_single_user_interference_free():
    inst = make_instance(users=1, seed=5)
    asg = assignment_from_tuples(inst, [(0, 1, 0, 0)])
    p = power_from_levels(inst, asg, [0.05])
    rc = rate_coefficients(inst, asg, p)
    expected = np.log2(1.0 + 0.05 * inst.gain[0, 1:] / inst.noise_power)
    np.testing.assert_allclose(rc.rbar[0, 1:], expected, rtol=1e-12)
    assert np.all(rc.rbar[:, 0] == 0.0)


def test_rate_coefficients_match_model_rate_on_active_tuples():
    inst, asg, p = scheduled_state(seed=8)
    rc = rate_coefficients(inst, asg, p)
    for (i, b, m, a) in active_tuples(asg):
        assert rc.rbar[i, b, m, a] == pytest.approx(
            rate(inst, asg, p, i, b, m, a), rel=1e-12)


def test_rate_coefficients_fallback_applies_to_idle_users_only():
    inst, asg, p = scheduled_state(seed=8)
    p.p[1] = 0.0                      # user 1 scheduled at zero power
    rc = rate_coefficients(inst, asg, p, fallback_power=0.009)
    assert np.all(rc.rbar[1] == 0.0)  # scheduled: keeps its true (zero) power
    asg2 = assignment_from_tuples(inst, [t for t in active_tuples(asg) if t[0] == 0])
    rc2 = rate_coefficients(inst, asg2, p, fallback_power=0.009)
    assert rc2.rbar[1, 1:].max() > 0  # idle: fallback power


def test_penalized_objective_binary_point_has_no_penalty():
    inst, asg, p = scheduled_state(seed=4)
    rc = rate_coefficients(inst, asg, p)
    z = pack_assignment(asg)
    got = penalized_objective(z, rc.rbar, 7.0, 11.0)
    expected = sum(rc.rbar[i, b, m, a] for (i, b, m, a) in active_tuples(asg))
    assert got == pytest.approx(expected, rel=1e-12)


def test_penalized_objective_half_point():
    inst = make_instance(seed=2)
    rbar = np.zeros_like(inst.gain)
    I, nb, M, A = inst.gain.shape
    n_s = I * (nb - 1) * M
    n_x = I * M * A
    z = np.full(n_x + n_s, 0.5)
    mu1, mu2 = 3.0, 5.0
    assert penalized_objective(z, rbar, mu1, mu2) == pytest.approx(
        -(mu1 * n_s + mu2 * n_x) / 4.0, rel=1e-12)


def test_penalized_objective_matches_loop_evaluation():
    inst, asg, p = scheduled_state(seed=12)
    rc = rate_coefficients(inst, asg, p)
    rng = np.random.default_rng(0)
    I, nb, M, A = rc.rbar.shape
    z = rng.uniform(size=I * M * A + I * (nb - 1) * M)
    x, s = unpack(z, (I, nb - 1, M, A))
    mu1, mu2 = 2.0, 3.0
    expected = 0.0
    for i in range(I):
        for b in range(1, nb):
            for m in range(M):
                for a in range(A):
                    expected += rc.rbar[i, b, m, a] * x[i, m, a] * s[i, b - 1, m]
    expected -= mu1 * float(np.sum(s - s ** 2))
    expected -= mu2 * float(np.sum(x - x ** 2))
    assert penalized_objective(z, rc.rbar, mu1, mu2) == pytest.approx(expected, rel=1e-12)


def test_surrogate_touches_and_minorizes():
    inst, asg, p = scheduled_state(seed=6)
    cfg = tiny_config()
    rc = rate_coefficients(inst, asg, p)
    rng = np.random.default_rng(1)
    I, nb, M, A = rc.rbar.shape
    n = I * M * A + I * (nb - 1) * M
    mu1 = mu2 = 4.0
    for trial in range(3):
        zp = rng.uniform(size=n)
        sp = build_surrogate(zp, rc.rbar, mu1, mu2, inst, p, cfg)
        ref = penalized_objective(zp, rc.rbar, mu1, mu2)
        assert sp.objective_value(zp) == pytest.approx(ref, rel=1e-9, abs=1e-9)
        for _ in range(1000):
            z = rng.uniform(size=n)
            assert sp.objective_value(z) <= penalized_objective(
                z, rc.rbar, mu1, mu2) + 1e-9


def test_surrogate_zero_rates_maximizer_is_binary():
    inst, asg, p = scheduled_state(seed=9)
    cfg = tiny_config(i_th=1e3)      # cap slack: pure penalty maximization
    rbar = np.zeros_like(inst.gain)
    rng = np.random.default_rng(2)
    zp = rng.uniform(size=pack_assignment(asg).size)
    sp = build_surrogate(zp, rbar, 5.0, 5.0, inst, p, cfg)
    z = solve_surrogate(sp)
    assert binariness_gap(z) <= 1e-9


def test_solve_surrogate_linear_unique_best_tuple():
    inst = make_instance(seed=3, users=2, cells=2, subchannels=1, antennas=1)
    I, nb, M, A = inst.gain.shape
    dims = (I, nb - 1, M, A)
    n = I * M * A + I * (nb - 1) * M
    c_x = np.zeros((I, M, A))
    c_s = np.zeros((I, nb - 1, M))
    c_s[0, 0, 0] = 2.0               # user 0 -> cell 1
    c_s[1, 1, 0] = 1.5               # user 1 -> cell 2
    c_x[:, :, 0] = 0.1
    sp = SurrogateProblem(dims, pack(c_x, c_s), np.zeros(n), 0.0,
                          np.zeros(n), [], False,
                          np.ones((I, nb - 1), dtype=bool))
    z = solve_surrogate(sp)
    x, s = unpack(z, dims)
    assert s[0, 0, 0] == pytest.approx(1.0, abs=1e-9)
    assert s[1, 1, 0] == pytest.approx(1.0, abs=1e-9)


def test_solve_surrogate_contention_higher_weight_wins():
    # two users compete for the single (cell, sub-channel) slot
    inst = make_instance(seed=3, users=2, cells=1, subchannels=1, antennas=1)
    I, nb, M, A = inst.gain.shape
    dims = (I, nb - 1, M, A)
    n = I * M * A + I * (nb - 1) * M
    c_x = np.zeros((I, M, A))
    c_s = np.zeros((I, nb - 1, M))
    c_s[0, 0, 0] = 2.0
    c_s[1, 0, 0] = 1.0
    sp = SurrogateProblem(dims, pack(c_x, c_s), np.zeros(n), 0.0,
                          np.zeros(n), [], False,
                          np.ones((I, nb - 1), dtype=bool))
    z = solve_surrogate(sp)
    x, s = unpack(z, dims)
    assert s[0, 0, 0] == pytest.approx(1.0, abs=1e-9)
    assert s[1, 0, 0] == pytest.approx(0.0, abs=1e-9)


def test_solve_surrogate_matches_dense_grid_oracle():
    # 4 effective degrees of freedom: x in simplex(2), s pair within slot caps
    inst = make_instance(seed=10, users=1, cells=2, subchannels=1, antennas=2)
    I, nb, M, A = inst.gain.shape
    dims = (I, nb - 1, M, A)
    rng = np.random.default_rng(5)
    c = rng.uniform(-1, 1, size=4)
    d = rng.uniform(0.0, 2.0, size=4)
    sp = SurrogateProblem(dims, c.copy(), d.copy(), 0.0, np.zeros(4), [],
                          False, np.ones((1, 2), dtype=bool))
    z = solve_surrogate(sp, fw_max_iter=4000)
    got = sp.objective_value(z)

    t = np.linspace(0, 1, 201)
    u, v = np.meshgrid(t, t, indexing="ij")
    mask = u + v <= 1.0
    best = -np.inf
    for tx in t:
        xvec = np.array([tx, 1 - tx])
        val_x = c[:2] @ xvec - 0.5 * (d[:2] @ xvec ** 2)
        sval = (c[2] * u + c[3] * v - 0.5 * (d[2] * u ** 2 + d[3] * v ** 2))
        sval[~mask] = -np.inf
        best = max(best, val_x + float(sval.max()))
    assert got == pytest.approx(best, abs=1e-4)


def test_mm_schedule_single_user_picks_best_antenna():
    inst = make_instance(seed=1, users=1, cells=1, subchannels=1, antennas=2)
    cfg = tiny_config(i_th=1e3)
    asg0 = assignment_from_tuples(inst, [(0, 1, 0, 0)])
    p0 = power_from_levels(inst, asg0, [0.05])
    asg = mm_schedule(inst, asg0, p0, cfg)
    (i, b, m, a) = active_tuples(asg)[0]
    assert (i, b, m) == (0, 1, 0)
    assert a == int(np.argmax(inst.gain[0, 1, 0]))


def test_mm_schedule_binariness_with_large_penalty():
    inst = make_instance(seed=17, users=4, cells=2, subchannels=3, antennas=2)
    cfg = tiny_config(i_th=1e3)
    asg0 = assignment_from_tuples(inst, [(0, 1, 0, 0), (1, 2, 0, 0),
                                         (2, 1, 1, 1), (3, 2, 1, 0)])
    p0 = power_from_levels(inst, asg0, np.full(4, 0.02))
    _, info = mm_schedule_detailed(inst, asg0, p0, cfg)
    assert info.binariness_gap <= 1e-3


def test_mm_schedule_ascent_and_oracle_gap():
    inst, asg0, p0 = scheduled_state(seed=23)
    cfg = tiny_config(i_th=1e3)
    asg, info = mm_schedule_detailed(inst, asg0, p0, cfg)
    tr = info.penalized_trace
    for earlier, later in zip(tr, tr[1:]):
        assert later >= earlier - 1e-9
    # best schedule value at the frozen powers, by exhaustive enumeration
    rc = rate_coefficients(inst, asg0, p0)
    q = np.full(inst.num_users, 0.02)
    best = 0.0
    for cand in oracle.enumerate_assignments(inst):
        val = sum(rc.rbar[i, b, m, a] for (i, b, m, a) in active_tuples(cand))
        best = max(best, val)
    got = sum(rc.rbar[i, b, m, a] for (i, b, m, a) in active_tuples(asg))
    assert got <= best + 1e-9
    assert got >= 0.5 * best        # sanity: the heuristic is not degenerate


def test_mm_schedule_argmax_invariance_single_user():
    inst = make_instance(seed=31, users=1, cells=2, subchannels=2, antennas=2)
    cfg = tiny_config(i_th=1e3, mu1=1e-12, mu2=1e-12)
    asg0 = assignment_from_tuples(inst, [(0, 1, 0, 0)])
    p0 = power_from_levels(inst, asg0, [0.03])
    rc = rate_coefficients(inst, asg0, p0)
    asg = mm_schedule(inst, asg0, p0, cfg)
    (i, b, m, a) = active_tuples(asg)[0]
    assert rc.rbar[i, b, m, a] == pytest.approx(float(rc.rbar.max()), rel=1e-12)


def test_mm_schedule_scale_invariance():
    inst, asg0, p0 = scheduled_state(seed=29)
    cfg1 = tiny_config(i_th=1e3, mu1=5.0, mu2=5.0)
    rc = rate_coefficients(inst, asg0, p0)
    asg_a = mm_schedule(inst, asg0, p0, cfg1)

    scaled = make_instance(seed=29)      # same gains; rates scale via power? no:
    # scale rbar by scaling all gains is nonlinear; instead scale mu with rbar
    cfg2 = tiny_config(i_th=1e3, mu1=5.0 * 3.0, mu2=5.0 * 3.0)
    # feed a surrogate directly: scaling rbar and mu jointly keeps the argmax
    from hetnet_jpcs import scheduler as S
    z0 = S.fractional_start(inst, power_levels=np.full(2, 0.02), i_th=cfg1.i_th)
    sp1 = build_surrogate(z0, rc.rbar, 5.0, 5.0, inst, p0, cfg1)
    sp2 = build_surrogate(z0, 3.0 * rc.rbar, 15.0, 15.0, inst, p0, cfg2)
    z1 = solve_surrogate(sp1)
    z2 = solve_surrogate(sp2)
    r1 = round_assignment(z1, inst, p0, cfg1, rbar=rc.rbar)
    r2 = round_assignment(z2, inst, p0, cfg2, rbar=3.0 * rc.rbar)
    np.testing.assert_array_equal(r1.s, r2.s)
    np.testing.assert_array_equal(r1.x, r2.x)


def test_round_assignment_identity_on_binary_feasible():
    inst, asg, p = scheduled_state(seed=14)
    cfg = tiny_config(i_th=1e3)
    rc = rate_coefficients(inst, asg, p)
    out = round_assignment(pack_assignment(asg), inst, p, cfg, rbar=rc.rbar)
    np.testing.assert_array_equal(out.s, asg.s)
    np.testing.assert_array_equal(out.x, asg.x)


def test_round_assignment_majority_wins():
    inst = make_instance(seed=3, users=2, cells=1, subchannels=1, antennas=1)
    cfg = tiny_config(i_th=1e3)
    I, nb, M, A = inst.gain.shape
    x = np.ones((I, M, A))
    s = np.zeros((I, nb - 1, M))
    s[0, 0, 0] = 0.6
    s[1, 0, 0] = 0.4
    out = round_assignment(pack(x, s), inst, zero_power(inst), cfg,
                           power_levels=np.zeros(I))
    assert out.s[0, 1, 0] == 1.0
    assert out.s[1, 1, 0] == 0.0


def test_round_assignment_always_feasible():
    rng = np.random.default_rng(100)
    inst, asg, p = scheduled_state(seed=19)
    cfg = tiny_config(i_th=1e-12, r_min=0.0)
    rc = rate_coefficients(inst, asg, p)
    I, nb, M, A = inst.gain.shape
    n = I * M * A + I * (nb - 1) * M
    q = np.full(I, 0.05)
    for _ in range(100):
        z = rng.uniform(size=n)
        out = round_assignment(z, inst, p, cfg, rbar=rc.rbar, power_levels=q)
        pw = power_from_levels(inst, out, q)
        viol = check_feasibility(inst, out, pw, cfg)
        assert viol == []


def test_fractional_start_respects_cross_tier_cap():
    inst, asg, p = scheduled_state(seed=40)
    cfg = tiny_config(i_th=1e-13)
    q = np.full(inst.num_users, 0.1)
    z0 = fractional_start(inst, power_levels=q, i_th=cfg.i_th)
    I, nb, M, A = inst.gain.shape
    x, s = unpack(z0, (I, nb - 1, M, A))
    w = q[:, None, None] * inst.gain[:, 0, :, :]
    cross = np.einsum("ima,ima,ibm->m", w, x, s)
    assert np.all(cross <= cfg.i_th * (1 + 1e-9))
