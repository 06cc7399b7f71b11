import dataclasses
import json
import math

import numpy as np
import pytest
import yaml

import oracles
from aan_gaitsim.cli import main, parse_seeds
from aan_gaitsim.config import (
    ConfigError,
    ProtocolConfig,
    Session,
    SimConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    with_seed,
)
from aan_gaitsim.controller import GainSet
from aan_gaitsim.export import export
from aan_gaitsim.harness import EstimatorLockError, Simulation, impaired_phase, run_protocol
from aan_gaitsim.oscillator import Side
from helpers import quiet_config, short_protocol

DEFAULT = GainSet(1.1, 1.0)


def impaired_sim(cfg=None, trace=False):
    sim = Simulation(cfg or quiet_config(), trace=trace)
    sim.warm_up()
    sim.plant.set_impaired(True)
    return sim


def record_errors(sim):
    seen = []
    orig = sim.current_errors

    def spy():
        err = orig()
        seen.append(err)
        return err

    sim.current_errors = spy
    return seen


# --- episodes --------------------------------------------------------------


def test_episode_objective_matches_hand_stepped_oracle():
    sim = impaired_sim()
    sim.run_episode(GainSet(0.0, 0.0), Session.IMPAIRED, assist_on=False)
    errs = record_errors(sim)
    r = sim.run_episode(DEFAULT, Session.ASSIST_OPTIMIZE)
    cc = sim.cfg.controller
    assert len(errs) == sim.cfg.protocol.episode_cycles
    steps = oracles.ilc_replay(errs, 1.1, 1.0, cc.lambda_theta, cc.lambda_phi, cc.curve.phi_start_init, cc.curve.clamp)
    tail = slice(-sim.cfg.protocol.eval_cycles, None)
    e_th = np.mean([e[0] for e in errs[tail]])
    e_ph = np.mean([e[1] for e in errs[tail]])
    f = np.mean([s[0] for s in steps[tail]])
    assert r.objective == pytest.approx(oracles.objective(e_th, e_ph, f), abs=1e-9)
    assert (r.mean_e_theta, r.mean_e_phi, r.mean_f_mag) == pytest.approx((e_th, e_ph, f), abs=1e-12)
    assert sim.assist.phi_start == pytest.approx(steps[-1][1], abs=1e-12)
    assert r.cycles_used == 10


def test_zero_gains_never_assist():
    sim = impaired_sim(trace=True)
    n0 = len(sim.log.trace)
    errs = record_errors(sim)
    r = sim.run_episode(GainSet(0.0, 0.0), Session.ASSIST_OPTIMIZE)
    assert r.mean_f_mag == 0.0
    assert max(sim.log.trace.tau_d[n0:]) == 0.0
    tail = errs[-10:]
    expect = oracles.objective(np.mean([e[0] for e in tail]), np.mean([e[1] for e in tail]), 0.0)
    assert r.objective == pytest.approx(expect, abs=1e-12)


def test_same_seed_same_episode_result():
    def one():
        sim = impaired_sim(SimConfig())
        return sim.run_episode(DEFAULT, Session.ASSIST_OPTIMIZE)

    assert repr(one()) == repr(one())


def test_rate_contract():
    sim = impaired_sim(trace=True)
    n_events = len(sim.log.events)
    n_ep = len(sim.log.episodes)
    sim.run_episode(DEFAULT, Session.ASSIST_OPTIMIZE)
    new = sim.log.events[n_events:]
    assert sum(ev.side is Side.IMPAIRED for ev in new) == sim.cfg.protocol.episode_cycles
    assert len(sim.log.episodes) == n_ep + 1
    t = np.frombuffer(sim.log.trace.t, dtype=float)
    np.testing.assert_allclose(np.diff(t), 1 / 250, atol=1e-9)
    assert sim.n_plant == math.floor(sim.n_tick * 400 / 250 + 1e-9)


def test_lock_loss_aborts_with_diagnostic():
    cfg = SimConfig(protocol=ProtocolConfig(lock_timeout=0.2))
    with pytest.raises(EstimatorLockError, match="no landmark event"):
        Simulation(cfg, trace=False).warm_up()


def test_impaired_phase_is_half_a_cycle_on():
    assert impaired_phase(0.2) == pytest.approx(0.7)
    assert impaired_phase(0.75) == pytest.approx(0.25)
    assert 0.0 <= impaired_phase(0.5) < 1.0


# --- protocol --------------------------------------------------------------


@pytest.fixture(scope="module")
def short_run():
    return run_protocol(short_protocol(), trace=True)


def test_protocol_sessions_and_summaries(short_run):
    log = short_run
    sizes = {s: len(v) for s, v in log.session_episodes.items()}
    assert sizes == {
        Session.NORMAL: 1,
        Session.IMPAIRED: 1,
        Session.ASSIST_PREDEFINED: 5,
        Session.ASSIST_OPTIMIZE: 2,
        Session.ASSIST_STABLE: 1,
    }
    assert [r.index for r in log.episodes] == list(range(10))
    pre = [r.result.gains for r in log.episodes if r.session is Session.ASSIST_PREDEFINED]
    assert set(g.as_tuple() for g in pre) == {(0.2, 0.0), (0.2, 2.0), (2.0, 0.0), (2.0, 2.0), (1.1, 1.0)}
    assert set(log.metrics) >= {"NORMAL", "IMPAIRED", "ASSIST_PREDEFINED", "ASSIST_OPTIMIZE", "ASSIST_OPTIMAL"}
    assert log.metrics["NORMAL"].hpi == pytest.approx(1.0, abs=0.02)
    assert log.metrics["IMPAIRED"].sap_fle > 8.0
    conv = log.convergence
    assert conv["converged"] is False and conv["optimize_episodes"] == 2
    assert conv["episodes"] == 7 and conv["gait_cycles"] == 140
    assert log.gp is not None and len(log.gp["x"]) == 7


def test_stable_session_uses_last_selected_gains(short_run):
    opt = [r for r in short_run.episodes if r.session is Session.ASSIST_OPTIMIZE]
    stable = [r for r in short_run.episodes if r.session is Session.ASSIST_STABLE]
    assert stable[0].result.gains == opt[-1].result.gains


def test_partial_protocol_without_optimizer():
    cfg = short_protocol(SimConfig(protocol=ProtocolConfig(sessions=("NORMAL", "IMPAIRED"))))
    log = run_protocol(cfg, trace=False)
    assert log.convergence == {} and log.gp is None
    assert set(log.metrics) == {"NORMAL", "IMPAIRED"}


# --- config ----------------------------------------------------------------


def test_default_config_round_trips_through_yaml(tmp_path):
    cfg = short_protocol()
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(config_to_dict(cfg)))
    assert load_config(p) == cfg
    assert load_config(None) == SimConfig()


def test_partial_yaml_fills_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("protocol:\n  seed: 7\ncontroller:\n  curve:\n    a: 8\n")
    cfg = load_config(p)
    assert cfg.protocol.seed == 7 and cfg.controller.curve.a == 8.0
    assert cfg.plant == SimConfig().plant
    assert with_seed(cfg, 3).protocol.seed == 3


@pytest.mark.parametrize(
    "data,match",
    [
        ({"bogus": 1}, "unknown key"),
        ({"plant": {"peak_flex": 30}}, r"plant: unknown key\(s\) peak_flex"),
        ({"protocol": {"episode_cycles": 2.5}}, "integer"),
        ({"protocol": {"eval_cycles": 30}}, "eval_cycles"),
        ({"protocol": {"sessions": ["NORMAL", "WALKING"]}}, "WALKING"),
        ({"protocol": {"sessions": ["ASSIST_STABLE"]}}, "ASSIST_OPTIMIZE"),
        ({"controller": {"lambda_theta": 1.0}}, "lambda_theta"),
        ({"optimizer": {"region": {"k_theta": [0.2]}}}, "2 entries"),
        ({"human": {"enabled": "yes"}}, "true/false"),
        ({"plant": {"coupling_coeff": 2.0}}, "coupling_coeff"),
        ({"plant": []}, "mapping"),
    ],
)
def test_bad_config_is_rejected(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


def test_unreadable_or_malformed_yaml(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("protocol: [unclosed\n")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_config(p)


# --- export ----------------------------------------------------------------


def test_export_files_and_byte_stable_reexport(short_run, tmp_path):
    a = export(short_run, tmp_path / "a", seed=1)
    b = export(short_run, tmp_path / "b", seed=1)
    names = sorted(p.name for p in a)
    assert names == ["episodes.csv", "gp_final.json", "metrics.json", "run_info.json", "trace.csv"]
    for pa, pb in zip(a, b):
        if pa.name != "run_info.json":
            assert pa.read_bytes() == pb.read_bytes()
    lines = (tmp_path / "a" / "trace.csv").read_text().splitlines()
    assert lines[0] == "t,theta_imp,theta_hlth,phi_imp,phi_hlth,tau_d,tau_actual"
    duration = float(lines[-1].split(",")[0])
    assert abs((len(lines) - 1) - duration * 250) <= 1
    eps = (tmp_path / "a" / "episodes.csv").read_text().splitlines()
    assert eps[0].startswith("index,k_theta,k_phi,objective,e_theta,e_phi,f_mag")
    assert len(eps) == 1 + len(short_run.episodes)
    doc = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert doc["seed"] == 1 and doc["convergence"]["converged"] is False
    gp = json.loads((tmp_path / "a" / "gp_final.json").read_text())
    assert set(gp["hyperparams"]) == {"sigma", "sigma_noise", "l1", "l2"}


def test_export_full_precision(short_run, tmp_path):
    export(short_run, tmp_path)
    row = (tmp_path / "episodes.csv").read_text().splitlines()[1].split(",")
    assert float(row[3]) == short_run.episodes[0].result.objective


def test_export_omits_empty_sections(tmp_path):
    cfg = short_protocol(SimConfig(protocol=ProtocolConfig(sessions=("NORMAL",))))
    log = run_protocol(cfg, trace=False)
    written = {p.name for p in export(log, tmp_path)}
    assert written == {"episodes.csv", "metrics.json", "run_info.json"}
    text = (tmp_path / "metrics.json").read_text()
    doc = json.loads(text)
    assert "convergence" not in doc and "null" not in text
    assert "hpi" in doc["sessions"]["NORMAL"]


def test_export_to_unwritable_path_names_it(short_run, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match=str(blocker)):
        export(short_run, blocker / "out")


# --- CLI -------------------------------------------------------------------


def write_cfg(tmp_path, cfg, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(config_to_dict(cfg)))
    return str(p)


def converging_config():
    cfg = short_protocol()
    return dataclasses.replace(cfg, optimizer=dataclasses.replace(cfg.optimizer, stop_tol=1.0, stop_window=1))


def test_parse_seeds():
    assert parse_seeds("3") == [3]
    assert parse_seeds("1..4") == [1, 2, 3, 4]
    assert parse_seeds("1,5..6") == [1, 5, 6]
    for bad in ("a", "4..1"):
        with pytest.raises(Exception):
            parse_seeds(bad)


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "--config", write_cfg(tmp_path, SimConfig())]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text("plant:\n  wobble: 1\n")
    assert main(["validate", "--config", str(bad)]) == 1
    assert "wobble" in capsys.readouterr().err


def test_cli_run_exit_codes(tmp_path):
    assert main(["run", "--config", write_cfg(tmp_path, converging_config()), "--seed", "2", "--out", str(tmp_path / "ok"), "--no-trace"]) == 0
    assert (tmp_path / "ok" / "metrics.json").exists()
    assert not (tmp_path / "ok" / "trace.csv").exists()
    capped = write_cfg(tmp_path, short_protocol(), "capped.yaml")
    assert main(["run", "--config", capped, "--out", str(tmp_path / "cap"), "--no-trace"]) == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", capped, "--out", str(blocker / "x"), "--no-trace"]) == 1


def test_cli_sweep(tmp_path, capsys):
    cfg = write_cfg(tmp_path, converging_config())
    assert main(["sweep", "--config", cfg, "--seeds", "1..2", "--out", str(tmp_path / "sw"), "--no-trace"]) == 0
    assert (tmp_path / "sw" / "seed_1" / "episodes.csv").exists()
    assert (tmp_path / "sw" / "seed_2" / "episodes.csv").exists()
    assert "2/2 runs converged" in capsys.readouterr().out


def test_no_impairment_means_negligible_assistance():
    cfg = short_protocol(max_bo_episodes=5, stable_episodes=2)
    cfg = dataclasses.replace(cfg, plant=dataclasses.replace(cfg.plant, flexion_deficit=0.0, temporal_shift=0.0))
    log = run_protocol(cfg, trace=False)
    stable = [r.result for r in log.episodes if r.session is Session.ASSIST_STABLE]
    assert stable[-1].mean_f_mag < 1.0
