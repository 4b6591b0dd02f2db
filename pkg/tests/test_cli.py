import json

import yaml
from click.testing import CliRunner

from gatherbuild.cli import main


def write_config(tmp_path, **overrides):
    cfg = {
        "treatment": "us_federal",
        "episode": {"episode_length": 100, "tax_period": 10},
        "seeds": [1, 2],
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    path = tmp_path / "exp.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_eval_replay_analyze_saez_fit_pipeline(tmp_path):
    runner = CliRunner()
    config = write_config(tmp_path)

    result = runner.invoke(main, ["eval", "--config", str(config)])
    assert result.exit_code == 0, result.output
    summary = json.loads(result.output[result.output.index("{"):])
    assert summary["treatment"] == "us_federal"
    assert summary["episodes"] == 2

    replay_path = tmp_path / "out" / "replay_us_federal_seed1.jsonl"
    assert replay_path.exists()

    result = runner.invoke(main, ["replay", str(replay_path)])
    assert result.exit_code == 0, result.output
    info = json.loads(result.output[result.output.index("{"):])
    assert info["verified"] and info["ticks"] == 100

    result = runner.invoke(
        main,
        ["analyze", str(replay_path),
         str(tmp_path / "out" / "replay_us_federal_seed2.jsonl"),
         "--output", str(tmp_path / "analysis"), "--gaming-agent", "0"],
    )
    assert result.exit_code == 0, result.output
    per_skill = (tmp_path / "analysis" / "per_skill.csv").read_text().splitlines()
    assert len(per_skill) == 5
    gaming = json.loads((tmp_path / "analysis" / "tax_gaming.json").read_text())
    assert "smoothed_total_tax" in gaming

    result = runner.invoke(main, ["saez-fit", str(replay_path)])
    assert result.exit_code == 0, result.output
    fit = json.loads(result.output[result.output.index("{"):])
    assert "elasticity" in fit


def test_eval_learned_without_checkpoint_errors(tmp_path):
    runner = CliRunner()
    config = write_config(tmp_path, treatment="learned")
    result = runner.invoke(main, ["eval", "--config", str(config)])
    assert result.exit_code != 0
    assert "checkpoint" in str(result.exception)


def test_analyze_productivity_filter(tmp_path):
    runner = CliRunner()
    config = write_config(tmp_path)
    runner.invoke(main, ["eval", "--config", str(config)])
    replay_path = tmp_path / "out" / "replay_us_federal_seed1.jsonl"
    result = runner.invoke(
        main,
        ["analyze", str(replay_path), "--output", str(tmp_path / "a2"),
         "--min-productivity", "1e9"],
    )
    assert result.exit_code != 0
    assert "productivity filter" in result.output
