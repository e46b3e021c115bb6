import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

import gnnlqr.stability
from gnnlqr import __version__
from gnnlqr.cli import build_parser, config_from_args, main
from gnnlqr.experiments import (
    CAMPAIGN_MINIMUMS,
    EXPERIMENTS,
    ExperimentConfig,
    default_config,
    load_config,
    run,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = """\
n_nodes = 8
knn_k = 3
horizon = 6
n_realizations = 2
train_size = 20
valid_size = 10
test_size = 10
batch_size = 10
epochs = 2
features = 4
orders = 1, 2
lrs = 0.01
gnn_arch = 4, 2
gf_arch = 4, 2
mlp_hidden = 2
dmlp_hidden = 4
a_norm_grid = 0.995, 1.01
eps_grid = 0.01, 0.1
node_counts = 8, 10
penalties = none, size
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def test_default_configs():
    cfg = default_config("exp2")
    assert (cfg.n_nodes, cfg.horizon, cfg.n_realizations, cfg.train_size) == (20, 30, 10, 100)
    assert default_config("exp3").n_realizations == 5
    paper = default_config("exp5", "paper")
    assert paper.node_counts == (50, 63, 75, 87, 100)
    assert (paper.n_nodes, paper.n_realizations) == (50, 100)
    with pytest.raises(ValueError):
        default_config("exp9")
    with pytest.raises(ValueError):
        default_config("exp2", n_nodes=0)
    with pytest.raises(ValueError):
        default_config("exp2", eps_grid=())


def test_shipped_configs_match_defaults():
    for scale in ("desk", "paper"):
        for name in EXPERIMENTS:
            assert load_config(CONFIGS / f"{scale}_{name}.cfg") == default_config(name, scale)


def test_load_config_and_hash(tiny_cfg, tmp_path):
    cfg = load_config(tiny_cfg, experiment="exp1")
    assert cfg.orders == (1, 2) and cfg.lrs == (0.01,) and cfg.gnn_arch == (4, 2)
    assert cfg.penalties == ("none", "size")
    # workers and output location do not change the hash
    assert cfg.updated(workers=3, out="/x").config_hash() == cfg.config_hash()
    assert cfg.updated(seed=1).config_hash() != cfg.config_hash()
    # the written text reloads to the same config
    path = tmp_path / "again.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg
    bad = tmp_path / "bad.cfg"
    bad.write_text("nodes = 3\n")
    with pytest.raises(KeyError):
        load_config(bad)


def test_cli_parsing(tiny_cfg):
    args = build_parser().parse_args(["exp4", "--config", str(tiny_cfg), "--seed", "7", "--eps-grid", "0.01,0.02",
                                      "--features", "8", "--order", "3", "--lr", "0.02"])
    cfg = config_from_args(args)
    assert cfg.experiment == "exp4" and cfg.seed == 7
    assert cfg.eps_grid == (0.01, 0.02)
    assert cfg.gnn_arch == (8, 3) and cfg.gnn_lr == 0.02
    cfg1 = config_from_args(build_parser().parse_args(["exp1", "--features", "4,8", "--order", "2", "--lr", "0.1"]))
    assert cfg1.features == (4, 8) and cfg1.orders == (2,) and cfg1.lrs == (0.1,)
    assert config_from_args(build_parser().parse_args(["exp5", "--scale", "paper"])).n_nodes == 50
    with pytest.raises(SystemExit):
        build_parser().parse_args(["exp6"])


@pytest.mark.parametrize("name", ["exp1", "exp2", "exp3", "exp4", "exp5"])
def test_tiny_experiments_write_outputs(name, tiny_cfg, tmp_path, capsys):
    out = tmp_path / name
    assert main([name, "--config", str(tiny_cfg), "--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["metadata"]["experiment"] == name
    csvs = sorted(out.glob(f"{name}_*.csv"))
    assert csvs
    cfg = load_config(tiny_cfg, experiment=name)
    for path in csvs:
        head = path.read_text().splitlines()[:4]
        assert head == [f"# experiment: {name}", f"# config_hash: {cfg.config_hash()}", "# seed: 0",
                        f"# version: {__version__}"]
    assert (out / f"{name}_summary.json").exists()
    assert load_config(out / f"{name}_config.txt") == cfg.updated(out=str(out))


def test_exp2_tiny_contents(tiny_cfg):
    res = run(load_config(tiny_cfg, experiment="exp2"))
    table = {r["controller"]: r for r in res.tables["table"]}
    assert table["optim"]["median"] == 1.0
    assert table["gnn"]["param_count"] == 3 * 4 + 4
    for kind in ("lqr", "mlp", "dmlp", "gnn", "gf", "open_loop"):
        assert table[kind]["median"] >= 1.0 - 1e-9
    assert set(res.summary["medians"]) == set(table)


def test_exp3_zero_a_norm(tiny_cfg):
    # with A = 0 the open-loop state vanishes after one step
    res = run(load_config(tiny_cfg, experiment="exp3", a_norm_grid=(0.0,), n_realizations=1))
    traces = [t for t in res.tables["traces"] if t["t"] >= 1]
    assert all(t["open_norm"] == 0.0 for t in traces)
    raw = res.tables["raw"][0]
    assert raw["open_terminal_ratio"] == 0.0 and not raw["open_loop_unstable"]


def test_exp4_zero_eps(tiny_cfg):
    res = run(load_config(tiny_cfg, experiment="exp4", n_realizations=1))
    zero = [r for r in res.tables["raw"] if r["eps"] == 0.0]
    assert len(zero) == 2
    for r in zero:
        assert r["stable_ratio"] == 1.0 and r["rel_cost_diff"] == 0.0 and r["xi_change_lhs"] == 0.0


def test_exp5_same_size_is_plain_evaluation(tiny_cfg):
    res = run(load_config(tiny_cfg, experiment="exp5", node_counts=(8,), n_realizations=1))
    assert all(r["n_nodes"] == 8 for r in res.tables["raw"])
    assert {r["controller"] for r in res.tables["raw"]} == {"gnn", "gf", "dmlp"}


def test_verify_small_passes():
    cfg = default_config("verify", verify_scale=0.02)
    res = run(cfg)
    assert res.summary["passed"]
    for s in res.summary["suites"]:
        assert s["instances"] >= s["required"] >= 1


def test_verify_full_minimums_declared():
    assert CAMPAIGN_MINIMUMS["filter_output"] == 1000 and CAMPAIGN_MINIMUMS["input_state"] == 500
    assert CAMPAIGN_MINIMUMS["stability_change"] == 1500 and CAMPAIGN_MINIMUMS["permutation"] == 200


def test_verify_detects_injected_violation(tmp_path, monkeypatch, capsys):
    real = gnnlqr.stability.stability_constant

    def optimistic(d, p, interval=None):
        rep = real(d, p, interval)
        xi = 0.1 * rep.xi
        return replace(rep, xi=xi, is_sufficiently_stable=True, beta1=rep.b_term / (1 - xi))

    monkeypatch.setattr(gnnlqr.stability, "stability_constant", optimistic)
    cfg_path = tmp_path / "v.cfg"
    cfg_path.write_text("verify_scale = 0.02\n")
    assert main(["verify", "--config", str(cfg_path)]) == 1
    printed = json.loads(capsys.readouterr().out)
    assert not printed["summary"]["passed"]


def test_config_dataclass_is_frozen():
    cfg = ExperimentConfig()
    with pytest.raises(Exception):
        cfg.seed = 3
    assert np.isclose(cfg.a_norm, 0.995)
