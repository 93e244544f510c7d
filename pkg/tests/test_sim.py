import hashlib
import json

import numpy as np
import pytest

from thzris import cli
from thzris.geometry import BlockageModel
from thzris.policy.agent import FeatureScales
from thzris.policy.checkpoint import TrainedPolicy, save_policy
from thzris.policy.network import PolicyParams, PolicyShape
from thzris.queues import ArrivalConfig
from thzris.scheduler import Association
from thzris.sim.config import ConfigError, SimConfig
from thzris.sim.dataset import generate_dataset, load_dataset, split_episodes
from thzris.sim.episode import (TRACE_COLUMNS, compare, episode_streams, run_episode,
                                summary_from_csv)

SHORT = SimConfig(horizon_t=200, seed=3)


# -- config -----------------------------------------------------------------

def test_config_roundtrip_and_hash():
    cfg = SimConfig(n_users=5, seed=9)
    back = SimConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg
    assert cfg.hash() == cfg.replace(seed=1).hash()
    assert cfg.hash() != cfg.replace(horizon_t=7).hash()


@pytest.mark.parametrize("data", [{"bogus": 1}, {"channel": {"freq": 1}}, {"horizon_t": 0},
                                  {"scheduler": "magic"}, {"risk": {"epsilon": -1}},
                                  {"arrivals": {"lambda_u": [1, 2]}}, {"seed": -1}])
def test_config_rejects_invalid(data):
    with pytest.raises(ConfigError):
        SimConfig.from_dict(data)


def test_config_scalar_arrivals():
    cfg = SimConfig.from_dict({"n_users": 4, "arrivals": {"lambda_u": 0.5}})
    assert cfg.arrivals.lambda_u == (0.5,) * 4


def test_config_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        SimConfig.load(tmp_path / "nope.json")


def test_replace_resizes_uniform_arrivals():
    assert SimConfig().replace(n_users=7).arrivals.lambda_u == (1.0,) * 7


# -- episodes ---------------------------------------------------------------

def test_streams_independent_of_scheduler():
    a = episode_streams(1, 0)
    b = episode_streams(1, 0)
    assert a["mobility"].random() == b["mobility"].random()
    assert episode_streams(1, 1)["mobility"].random() != episode_streams(1, 0)["mobility"].random()


def test_trace_shape_and_summary():
    tr = run_episode(SHORT)
    assert tr.horizon == SHORT.horizon_t
    s = tr.summary()
    assert s["mean_q"] == pytest.approx(tr.q_max.mean())
    assert set(s) >= {"mean_q", "mean_q2", "mean_sum_rate_bps", "constraint_eps_ok",
                      "constraint_eta_ok", "seed", "config_hash"}


def test_zero_arrivals_empty_system():
    cfg = SHORT.replace(arrivals=ArrivalConfig.uniform(0.0, SHORT.n_users))
    tr = run_episode(cfg)
    assert (tr.q_max == 0).all() and (tr.z1 == 0).all() and (tr.z2 == 0).all()


def test_blocked_forever_grows_linearly():
    lam = (0.5, 2.0, 1.0)
    cfg = SimConfig(horizon_t=2000, seed=4, initial_los=False, arrivals=ArrivalConfig(lam),
                    blockage=BlockageModel(p_stay_blocked=1.0))
    tr = run_episode(cfg)
    assert (tr.sum_rate_bps == 0).all() and (tr.served_count == 0).all()
    slope = np.polyfit(np.arange(tr.horizon), tr.q_max, 1)[0]
    assert slope == pytest.approx(max(lam), rel=0.05)


def test_same_seed_identical(tmp_path):
    a, b = run_episode(SHORT), run_episode(SHORT)
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    c = run_episode(SHORT.replace(seed=4))
    assert not np.array_equal(a.q_max, c.q_max)


def test_summary_recomputable_from_csv(tmp_path):
    tr = run_episode(SHORT)
    tr.write_csv(tmp_path / "t.csv")
    again = summary_from_csv(tmp_path / "t.csv", SHORT.risk.epsilon, SHORT.risk.eta)
    s = tr.summary()
    for k, v in again.items():
        assert s[k] == pytest.approx(v, abs=1e-9)


@pytest.mark.parametrize("kind", ["optimal", "random", "nearest"])
def test_recorded_actions_feasible(kind):
    tr = run_episode(SHORT.replace(scheduler=kind, horizon_t=50), record=True)
    assert len(tr.steps) == 50
    for step in tr.steps:
        Association(step.action.x)
        assert np.isfinite(step.reward)


def test_policy_scheduler_requires_policy():
    with pytest.raises(ConfigError):
        run_episode(SHORT.replace(scheduler="policy"))


def test_policy_scheduler_shape_checked():
    scales = FeatureScales()
    shape = PolicyShape(scales.n_features(2, 2), 4, 2, 2)
    pol = TrainedPolicy(PolicyParams.zeros(shape), scales)
    with pytest.raises(ConfigError):
        run_episode(SHORT.replace(scheduler="policy"), pol)


def test_policy_scheduler_runs():
    scales = FeatureScales()
    shape = PolicyShape(scales.n_features(4, 3), 4, 4, 3)
    pol = TrainedPolicy(PolicyParams.init(shape, np.random.default_rng(0)), scales)
    tr = run_episode(SHORT.replace(scheduler="policy", horizon_t=30), pol, record=True)
    assert tr.horizon == 30 and all(s.log_prob <= 0 for s in tr.steps)


def test_drift_check_optimal_short():
    tr = run_episode(SHORT, check_drift=True)
    assert tr.drift_violations == 0


# -- compare ----------------------------------------------------------------

def test_compare_optimal_vs_itself():
    rep = compare([SHORT], ["optimal"])
    assert rep["results"][0]["gaps"]["optimal"] == {"queue_gap": 0.0, "rate_gap": 0.0}


def test_compare_random_worse():
    rep = compare([SimConfig(horizon_t=1000)], ["random", "nearest"])
    gaps = rep["results"][0]["gaps"]
    assert gaps["random"]["rate_gap"] > 0 and gaps["random"]["queue_gap"] > 0


def test_compare_rejects_mismatched_horizons():
    with pytest.raises(ValueError):
        compare([SHORT, SHORT.replace(horizon_t=10)], ["random"])


# -- dataset ----------------------------------------------------------------

def test_split_counts():
    labels = split_episodes(10)
    assert labels.count("train") == 8 and labels.count("val") == 1 and labels.count("test") == 1
    with pytest.raises(ValueError):
        split_episodes(0)


def test_dataset_counts_and_determinism(tmp_path):
    cfg = SimConfig(horizon_t=100, seed=2)
    counts = generate_dataset(cfg, 10, tmp_path / "a.jsonl")
    assert counts == {"train": 800, "val": 100, "test": 100}
    generate_dataset(cfg, 10, tmp_path / "b.jsonl")
    digest = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in ("a.jsonl", "b.jsonl")]
    assert digest[0] == digest[1]
    eps = load_dataset(tmp_path / "a.jsonl")
    assert len(eps) == 10 and sum(len(e.states) for e in eps) == 1000
    for rec in (tmp_path / "a.jsonl").read_text().splitlines()[:50]:
        Association(np.array(json.loads(rec)["optimal_action"]))


def test_dataset_io_error_has_path(tmp_path):
    bad = tmp_path / "missing_dir" / "d.jsonl"
    with pytest.raises(OSError, match="missing_dir"):
        generate_dataset(SHORT, 1, bad)


def test_load_dataset_bad_record(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"episode": 0}\n')
    with pytest.raises(ValueError, match="d.jsonl:1"):
        load_dataset(p)


# -- command line -----------------------------------------------------------

def _write_cfg(tmp_path, **kw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"horizon_t": 60, **kw}))
    return path


def test_cli_simulate_rows(tmp_path):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["simulate", "--config", str(cfg), "--seed", "1", "--scheduler", "optimal",
                     "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "trace.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS) and len(lines) == 61
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["seed"] == 1 and summary["horizon_t"] == 60


def test_cli_simulate_deterministic(tmp_path):
    cfg = _write_cfg(tmp_path)
    for name in ("a", "b"):
        cli.main(["simulate", "--config", str(cfg), "--seed", "5", "--scheduler", "random",
                  "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_cli_missing_config(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    code = cli.main(["simulate", "--config", str(missing), "--seed", "1", "--scheduler", "optimal",
                     "--out", str(tmp_path / "o")])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_cli_unknown_flag(capsys):
    assert cli.main(["simulate", "--frobnicate", "--out", "x"]) == 1
    assert "usage" in capsys.readouterr().err


def test_cli_invalid_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text('{"horizon_t": -3}')
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


def test_cli_dataset_train_evaluate(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, horizon_t=20)
    data = tmp_path / "data.jsonl"
    assert cli.main(["dataset", "--config", str(cfg), "--episodes", "10", "--out", str(data)]) == 0
    out = tmp_path / "model"
    assert cli.main(["train", "--config", str(cfg), "--data", str(data), "--mode", "clone",
                     "--epochs", "2", "--hidden", "4", "--out", str(out)]) == 0
    assert (out / "report.csv").read_text().startswith("epoch,phase,train_loss")
    capsys.readouterr()
    assert cli.main(["evaluate", "--config", str(cfg), "--model", str(out / "policy.ckpt"),
                     "--data", str(data), "--metric", "per_ris_accuracy"]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0.0 <= res["value"] <= 1.0
    assert cli.main(["simulate", "--config", str(cfg), "--scheduler", "policy",
                     "--model", str(out / "policy.ckpt"), "--out", str(tmp_path / "sim")]) == 0


def test_cli_train_reinforce(tmp_path):
    cfg = _write_cfg(tmp_path, horizon_t=10, n_users=2)
    out = tmp_path / "rl"
    assert cli.main(["train", "--config", str(cfg), "--mode", "reinforce", "--hidden", "4",
                     "--rl-iterations", "2", "--out", str(out)]) == 0
    rows = (out / "report.csv").read_text().splitlines()
    assert len(rows) == 3 and rows[1].split(",")[1] == "reinforce"


def test_cli_clone_without_data(tmp_path):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["train", "--config", str(cfg), "--mode", "clone", "--out", str(tmp_path / "m")]) == 1


def test_cli_compare(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["compare", "--config", str(cfg), "--schedulers", "random",
                     "--users", "2,3"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert [r["n_users"] for r in rep["results"]] == [2, 3]


def test_cli_model_file_written_is_loadable(tmp_path):
    scales = FeatureScales()
    shape = PolicyShape(scales.n_features(4, 3), 4, 4, 3)
    save_policy(TrainedPolicy(PolicyParams.zeros(shape), scales), tmp_path / "p.ckpt")
    cfg = _write_cfg(tmp_path)
    assert cli.main(["simulate", "--config", str(cfg), "--scheduler", "policy",
                     "--model", str(tmp_path / "p.ckpt"), "--out", str(tmp_path / "o")]) == 0
