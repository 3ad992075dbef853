import filecmp
import os

import numpy as np
import pytest

from a2p.exceptions import ConfigurationError, CorruptCheckpointError
from a2p.harness import cli, runner
from a2p.harness import config as cfgmod
from a2p.harness.checkpoint import bundles_equal, load_checkpoint, save_checkpoint
from a2p.sac import AgentBundle
from a2p.adapt import AdaptState

TINY = ["total_steps=800", "sac.warmup_steps=100", "sac.batch_size=32", "sac.hidden=16,16",
        "sac.keep_last=4"]


def tiny_cfg(*extra, seeds="0,1,2,3,4"):
    return cfgmod.loads("", TINY + [f"seeds={seeds}", *extra])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    run = tmp_path_factory.mktemp("train")
    runner.cmd_train(tiny_cfg(), run)
    return run


class TestConfig:
    def test_defaults(self):
        cfg = cfgmod.loads("")
        assert cfg.total_steps == 30_000 and cfg.adapt.beta == 0.5 and cfg.sac.batch_size == 256
        assert len(cfg.sweep.mass_grid) == 11

    def test_sections_and_overrides(self):
        cfg = cfgmod.loads("[experiment]\nenv_id = point_mass\n[adapt]\nc = 0.05\n",
                           ["adapt.c=0.02", "seeds=3,4", "adapt.sign_flip=true"])
        assert (cfg.env_id, cfg.adapt.c, cfg.seeds, cfg.adapt.sign_flip) == ("point_mass", 0.02, (3, 4), True)

    def test_dumps_roundtrip(self):
        cfg = cfgmod.loads("", ["adapt.mode=random", "sweep.mass_grid=0.5,1.0", "sac.target_entropy=-2"])
        assert cfgmod.loads(cfgmod.dumps(cfg)) == cfg

    def test_off_mode_pins_epsilon(self):
        tc = cfgmod.loads("", ["adapt.mode=off"]).train_config(0)
        assert tc.epsilon0 == 0.0

    @pytest.mark.parametrize("override", ["adapt.nope=1", "bogus.c=1", "total_steps=ten",
                                          "adapt.mode=sometimes", "seeds=1,1", "noequals",
                                          "sac.gamma=1.5"])
    def test_rejects(self, override):
        with pytest.raises(ConfigurationError):
            cfgmod.loads("", [override])

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            cfgmod.load(tmp_path / "absent.ini")


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        b = AgentBundle.init(3, 1, hidden=(8,), random_state=0, log_alpha=-0.3)
        s = AdaptState(epsilon=0.2, d_avg=0.4, update_count=7)
        save_checkpoint(tmp_path / "c.bin", b, s, "[experiment]\n")
        b2, s2, echo = load_checkpoint(tmp_path / "c.bin")
        assert bundles_equal(b, b2) and s2 == s and echo == "[experiment]\n"

    def test_truncated(self, tmp_path):
        b = AgentBundle.init(3, 1, hidden=(8,), random_state=0)
        path = tmp_path / "c.bin"
        save_checkpoint(path, b, AdaptState())
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)
        path.write_bytes(b"not a checkpoint\n")
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)


class TestTrainRun:
    def test_layout(self, trained):
        names = set(os.listdir(trained))
        for k in range(5):
            assert f"trace_seed{k}.csv" in names and f"ckpt_seed{k}_final.bin" in names
            assert len(runner.find_snapshots(trained, k)) == 4
        assert {"config.echo", "summary.csv", "report.txt", "training_curve.svg"} <= names
        rows = runner.read_csv(trained / "trace_seed0.csv")
        assert len(rows) == 800 and list(rows[0]) == list(runner.TRACE_COLUMNS)
        assert len(runner.read_csv(trained / "summary.csv")) == 5

    def test_rerun_is_byte_identical(self, trained, tmp_path):
        runner.cmd_train(tiny_cfg(seeds="0"), tmp_path)
        assert filecmp.cmp(trained / "trace_seed0.csv", tmp_path / "trace_seed0.csv", shallow=False)
        # checkpoints embed the config echo, whose seed list differs here
        for name in ("ckpt_seed0_final.bin", "ckpt_seed0_ep0003.bin"):
            b1, s1, _ = load_checkpoint(trained / name)
            b2, s2, _ = load_checkpoint(tmp_path / name)
            assert bundles_equal(b1, b2) and s1 == s2

    def test_checkpoint_resumes_echoed_config(self, trained):
        _, state, echo = load_checkpoint(trained / "ckpt_seed0_final.bin")
        assert cfgmod.loads(echo) == runner.load_run_config(trained)
        assert 0.0 <= state.epsilon <= 1.0


class TestSweep:
    def test_full_grid(self, trained):
        grid = runner.cmd_sweep(trained)
        rows = runner.read_csv(trained / "grid.csv")
        assert len(rows) == 121
        assert all(int(r["n"]) == 4 * 5 * 8 for r in rows)
        nominal = [r for r in rows if float(r["mass_rel"]) == 1.0 and float(r["friction_rel"]) == 1.0]
        assert float(nominal[0]["normalized"]) == 1.0
        assert len(runner.read_csv(trained / "grid_per_seed.csv")) == 5 * 121
        assert (trained / "grid.svg").exists()
        again = runner.read_grid(trained / "grid.csv")
        np.testing.assert_array_equal(again.mean, grid.mean)

    def test_common_anchor(self, trained, tmp_path):
        runner.cmd_sweep(trained, (0.5, 1.0), (1.0,), tag="small")
        grid = runner.cmd_sweep(trained, (0.5, 1.0), (1.0,), anchor_run=trained, tag="small")
        np.testing.assert_allclose(grid.normalized(grid.nominal_mean()), grid.normalized())

    def test_normalisation_keeps_order_for_negative_returns(self):
        g = runner.EvalGrid((1.0, 2.0), (1.0,), np.array([[-200.0], [-100.0]]), np.zeros((2, 1)),
                            np.ones((2, 1)))
        norm = g.normalized()
        assert norm[0, 0] == 1.0 and norm[1, 0] == 1.5

    def test_missing_checkpoints_name_the_seed(self, trained, tmp_path):
        import shutil
        run = tmp_path / "partial"
        shutil.copytree(trained, run)
        for p in runner.find_snapshots(run, 2):
            os.remove(p)
        with pytest.raises(ConfigurationError, match="seed 2"):
            runner.cmd_sweep(run, (1.0,), (1.0,))
        assert cli.main(["sweep", str(run), "--mass-grid", "1.0", "--friction-grid", "1.0"]) == 1


def test_ablation_table(tmp_path):
    cfg = cfgmod.loads("", ["total_steps=200", "sac.warmup_steps=100", "sac.batch_size=16",
                            "sac.hidden=8", "seeds=0,1", "ablate.modes=adaptive,off",
                            "ablate.eval_episodes=2"])
    table = runner.cmd_ablate(cfg, tmp_path)
    betas = [k for k in table if k[0] == "beta"]
    assert [float(k[1]) for k in betas] == [0.0, 0.1, 0.3, 0.5, 0.7, 1.0]
    for key in table:
        mean, std, n, lo, hi = table[key]
        assert n == 2 and np.isfinite(mean) and std >= 0 and 0.0 <= lo <= hi <= 1.0
    assert table[("mode", "off")][4] == 0.0
    text = (tmp_path / "report.txt").read_text()
    assert "Parameter beta" in text and "+/-" in text


class TestCli:
    def test_train(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = cli.main(["train", "--set", "total_steps=150", "--set", "sac.warmup_steps=100",
                         "--set", "sac.batch_size=8", "--set", "sac.hidden=8", "--seeds", "0",
                         "--mode", "fixed", "--out", str(out)])
        assert code == 0 and (out / "summary.csv").exists()
        assert "mode=fixed" in capsys.readouterr().out

    def test_config_file(self, tmp_path):
        ini = tmp_path / "c.ini"
        ini.write_text("[experiment]\ntotal_steps = 0\nseeds = 5\n")
        assert cli.main(["train", "--config", str(ini), "--out", str(tmp_path / "r")]) == 0
        assert runner.read_csv(tmp_path / "r" / "summary.csv")[0]["seed"] == "5"

    def test_usage_errors(self, tmp_path):
        assert cli.main(["train", "--steps", "-5", "--out", str(tmp_path)]) == 1
        assert cli.main(["train", "--set", "adapt.beta=2", "--out", str(tmp_path)]) == 1
        assert cli.main(["sweep", str(tmp_path / "nothing")]) == 1
        with pytest.raises(SystemExit) as exc:
            cli.main(["fly"])
        assert exc.value.code == 1

    def test_verify_and_negative_control(self, tmp_path, capsys):
        small = ["--set", "verify.n_games=10", "--set", "verify.n_improvement_games=3"]
        assert cli.main(["verify", *small, "--out", str(tmp_path / "ok")]) == 0
        assert "<= gamma=0.9" in capsys.readouterr().out
        rows = runner.read_csv(tmp_path / "ok" / "certificate.csv")
        assert len(rows) == 10 * 4 + 3 * 3 and all(r["ok"] == "1" for r in rows)
        assert cli.main(["verify", *small, "--inject-bug", "--out", str(tmp_path / "bad")]) == 2
        assert "offending game seeds" in capsys.readouterr().err
