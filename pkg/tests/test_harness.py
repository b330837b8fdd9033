import csv
import os
from dataclasses import replace

import numpy as np
import pytest

from hetnet_jpcs.chansim import Scenario
from hetnet_jpcs.harness import (EXIT_BAD_CONFIG, EXIT_GUARD, EXIT_IO, EXIT_OK,
                                 ConfigError, HarnessConfig, cmd_convergence,
                                 cmd_oracle_gap, cmd_sweep_ith,
                                 cmd_sweep_penalty, default_config, dump_config,
                                 load_config, main, tiny_fixture)


def small_hc(**kw):
    sc = Scenario(users_total=4, num_smallcells=2, num_subchannels=2,
                  num_antennas=2, macro_radius_m=300.0, seed=3)
    base = dict(scenario=sc, r_min=0.0, drops=2, seed=3,
                ith_sweep_dbm=(-100.0, -90.0),
                mu_factors=(0.0, 10.0),
                init_policies=("uniform", "full"),
                oracle_levels=60, oracle_fixtures=2)
    base.update(kw)
    return HarnessConfig(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_config_round_trip(tmp_path):
    hc = default_config()
    p1 = tmp_path / "a.cfg"
    p2 = tmp_path / "b.cfg"
    dump_config(hc, str(p1))
    hc1 = load_config(str(p1))
    dump_config(hc1, str(p2))
    hc2 = load_config(str(p2))
    assert hc1 == hc2
    assert hc1.scenario == hc.scenario
    assert hc1.mu1 is None
    assert hc1.ith_sweep_dbm == hc.ith_sweep_dbm


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("users_total = 5\nbogus_key = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_config_rejects_bad_value(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("users_total = many\n")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_solver_config_uses_watts():
    hc = default_config()
    cfg = hc.solver_config()
    assert cfg.i_th == pytest.approx(1e-12, rel=1e-12)
    assert cfg.p_max == pytest.approx(10 ** ((23 - 30) / 10), rel=1e-12)


def test_sweep_ith_csv_shape(tmp_path):
    hc = small_hc(drops=1, ith_sweep_dbm=(-90.0,))
    out = tmp_path / "ith.csv"
    assert cmd_sweep_ith(hc, str(out)) == EXIT_OK
    header, rows = read_csv(str(out))
    assert header == ["ith_dbm", "scheme", "mean_sumrate", "ci95"]
    assert sorted(r[1] for r in rows) == sorted(
        ["jpcs_A3", "jpcs_A2", "bulk_A2", "epa", "jpcs_A1"])


def test_sweep_ith_near_zero_cap_kills_rate(tmp_path):
    hc = small_hc(drops=1, ith_sweep_dbm=(-200.0,))
    out = tmp_path / "ith.csv"
    assert cmd_sweep_ith(hc, str(out)) == EXIT_OK
    _, rows = read_csv(str(out))
    for r in rows:
        assert float(r[2]) < 1e-3


def test_sweep_penalty_csv(tmp_path):
    hc = small_hc(drops=2)
    out = tmp_path / "mu.csv"
    assert cmd_sweep_penalty(hc, str(out)) == EXIT_OK
    header, rows = read_csv(str(out))
    assert header == ["mu", "mean_sumrate", "max_binariness_gap"]
    assert [float(r[0]) for r in rows] == [0.0, 10.0]
    # above-threshold weights leave (near-)binary relaxed points
    assert float(rows[1][2]) <= 1e-3


def test_convergence_csv_and_determinism(tmp_path):
    hc = small_hc(drops=2)
    out1, out2 = tmp_path / "c1.csv", tmp_path / "c2.csv"
    assert cmd_convergence(hc, str(out1)) == EXIT_OK
    assert cmd_convergence(hc, str(out2)) == EXIT_OK
    assert out1.read_bytes() == out2.read_bytes()
    header, rows = read_csv(str(out1))
    assert header == ["drop", "init", "iteration", "sumrate"]
    # traces nondecreasing per (drop, init)
    by_run = {}
    for drop, init, it, sr in rows:
        by_run.setdefault((drop, init), []).append((int(it), float(sr)))
    for key, pts in by_run.items():
        pts.sort()
        vals = [v for _, v in pts]
        for earlier, later in zip(vals, vals[1:]):
            assert later >= earlier - 1e-9


def test_oracle_gap_csv_and_dominance(tmp_path):
    hc = small_hc()
    out = tmp_path / "gap.csv"
    assert cmd_oracle_gap(hc, str(out)) == EXIT_OK
    header, rows = read_csv(str(out))
    assert header[:2] == ["fixture", "users"]
    for r in rows:
        assert r[-1] == "True"


def test_tiny_fixture_dims_and_qos_free():
    hc = small_hc()
    for k in range(4):
        sc, inst, cfg = tiny_fixture(hc, k)
        assert sc.users_total <= 2 and sc.num_smallcells <= 2
        assert sc.num_subchannels <= 2 and sc.num_antennas <= 2
        assert cfg.r_min == 0.0


def test_main_exit_codes(tmp_path):
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text("bogus = 1\n")
    out = tmp_path / "o.csv"
    assert main(["sweep-ith", "--config", str(bad_cfg), "--out", str(out)]) \
        == EXIT_BAD_CONFIG
    assert main(["sweep-ith", "--config", str(tmp_path / "missing.cfg"),
                 "--out", str(out)]) == EXIT_IO

    good = tmp_path / "good.cfg"
    dump_config(small_hc(), str(good))
    assert main(["convergence", "--config", str(good), "--drops", "0",
                 "--out", str(out)]) == EXIT_BAD_CONFIG
    assert main(["convergence", "--config", str(good), "--drops", "1",
                 "--out", str(tmp_path / "nodir" / "x.csv")]) == EXIT_IO


def test_main_guard_exit(tmp_path):
    hc = small_hc(oracle_levels=10 ** 8, oracle_fixtures=1)
    cfgp = tmp_path / "g.cfg"
    dump_config(hc, str(cfgp))
    out = tmp_path / "g.csv"
    assert main(["oracle-gap", "--config", str(cfgp), "--out", str(out)]) \
        == EXIT_GUARD


def test_main_runs_sweep_end_to_end(tmp_path, monkeypatch):
    monkeypatch.setenv("HETNET_JPCS_WORKERS", "1")
    cfgp = tmp_path / "s.cfg"
    dump_config(small_hc(drops=1, ith_sweep_dbm=(-90.0,)), str(cfgp))
    out = tmp_path / "s.csv"
    assert main(["sweep-ith", "--config", str(cfgp), "--out", str(out),
                 "--seed", "9"]) == EXIT_OK
    assert out.exists()


def test_seed_override_changes_results(tmp_path):
    hc = small_hc(drops=1)
    cfgp = tmp_path / "c.cfg"
    dump_config(hc, str(cfgp))
    o1, o2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["convergence", "--config", str(cfgp), "--out", str(o1),
                 "--seed", "1"]) == EXIT_OK
    assert main(["convergence", "--config", str(cfgp), "--out", str(o2),
                 "--seed", "2"]) == EXIT_OK
    assert o1.read_bytes() != o2.read_bytes()
