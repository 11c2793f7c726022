import json

import numpy as np
import pytest

from tonelli import cli
from tonelli.search import CampaignConfig, ConfigError, run_search, run_verify


FREE_CONFIG = {
    "lagrangian": {"family": "mechanical", "dim": 1, "potential": {"kind": "zero"}},
    "max_power": 1,
    "k": 8,
    "seeds": {"count": 2, "rng_seed": 0},
}


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = CampaignConfig.from_dict({})
        assert cfg.periods == [1, 2, 4]
        assert cfg.bound_a == pytest.approx(0.6)

    def test_action_bound_must_exceed_constant_bound(self):
        with pytest.raises(ConfigError, match="exceed"):
            CampaignConfig.from_dict({"action_bound": 0.1})

    def test_bad_family(self):
        with pytest.raises(ConfigError):
            CampaignConfig.from_dict({"lagrangian": {"family": "nope", "dim": 1}})

    def test_aperiodic_potential_rejected(self):
        with pytest.raises(ConfigError, match="periodic"):
            CampaignConfig.from_dict(
                {"lagrangian": {"family": "mechanical", "dim": 1,
                                "potential": {"kind": "cosine", "coeff": 0.2, "wave": [0.3]}}}
            )


class TestCliSurface:
    def test_defaults_subcommand(self, capsys):
        assert cli.main(["defaults"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["prime"] == 2 and payload["k"] == 16

    def test_config_error_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"action_bound": -5}))
        assert cli.main(["--config", str(bad), "verify"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_search_free_particle_end_to_end(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(FREE_CONFIG))
        out = tmp_path / "out"
        assert cli.main(["--config", str(cfg), "--out", str(out), "search"]) == 0
        report = json.loads((out / "campaign_report.json").read_text())
        # the whole constant family is one orbit class
        assert report["orbits"] == 1
        assert (out / "registry.jsonl").exists()
        assert (out / "summary.csv").exists()
        assert (out / "index_table.csv").exists()
        assert (out / "figures" / "orbits_phase.png").exists()
        rows = (out / "summary.csv").read_text().splitlines()
        assert rows[1].split(",")[3:5] == ["0", "1"]  # pair (0, 1)

    def test_search_determinism(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(FREE_CONFIG))
        out1, out2 = tmp_path / "o1", tmp_path / "o2"
        cli.main(["--config", str(cfg), "--out", str(out1), "search"])
        cli.main(["--config", str(cfg), "--out", str(out2), "search"])
        assert (out1 / "registry.jsonl").read_bytes() == (out2 / "registry.jsonl").read_bytes()
        assert (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()

    def test_index_and_iterate_subcommands(self, tmp_path, capsys):
        from tonelli import broken as bk
        from tonelli import segment as sg
        from tonelli import lagrangian as lg

        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "lagrangian": {"family": "mechanical", "dim": 1,
                           "potential": {"kind": "cosine", "coeff": -0.25, "wave": [1]}},
            "k": 16, "index_n_max": 8,
        }))
        pend = lg.build_family("mechanical", {"dim": 1, "potential": {"kind": "cosine", "coeff": -0.25, "wave": [1]}})
        radii = sg.practical_radii(1 / 16, 0.25)
        loop = bk.from_nodes(pend, radii, 1, 16, np.zeros((16, 1)))
        loop_path = tmp_path / "loop.json"
        loop_path.write_text(bk.loop_to_json(loop))

        assert cli.main(["--config", str(cfg_path), "index", str(loop_path)]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["iota"] == 1 and payload["nu"] == 0
        assert payload["mean_index"] == 1.0

        assert cli.main(["--config", str(cfg_path), "iterate", str(loop_path), "-n", "3"]) == 0
        iterated = json.loads(capsys.readouterr().out)
        assert iterated["period"] == 3
        assert abs(iterated["mean_action"] - loop.mean_action) < 1e-12

    def test_bangert_demo_subcommand(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bangert": {"n_values": [2, 4], "x_samples": 5, "loop_samples": 32}}))
        out = tmp_path / "bd"
        assert cli.main(["--config", str(cfg), "--out", str(out), "bangert-demo"]) == 0
        assert (out / "bangert_slack_table.csv").exists()
        assert (out / "figures" / "bangert_slack.png").exists()
        text = capsys.readouterr().out
        assert "moving-point" in text and "pendulum-wave" in text


class TestVerify:
    def test_free_particle_suite_passes(self, tmp_path):
        cfg = CampaignConfig.from_dict(FREE_CONFIG)
        report = run_verify(cfg, tmp_path)
        assert report["passed"], [c for c in report["checks"] if not c["passed"]]
        assert (tmp_path / "verify_report.json").exists()

    def test_verify_cli_exit_zero(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(FREE_CONFIG))
        assert cli.main(["--config", str(cfg), "--out", str(tmp_path / "v"), "verify"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out and "[FAIL]" not in out


def test_search_library_level_registry(tmp_path):
    cfg = CampaignConfig.from_dict(FREE_CONFIG)
    report, registry = run_search(cfg, tmp_path / "out")
    assert len(registry) == 1
    assert report["periods"]["2"]["registry_size"] == 1
    assert not report["rail_violations"]
