import csv
import json

import pytest

from muesli_lab._validation import ValidationError
from muesli_lab.cli import main
from muesli_lab.config import (OUTPUT_DIR_ENV, RunSpec, dump_config, load_config, parse_config)

TINY = ["--set", "total_steps=40", "--set", "eval_interval=20"]


def test_print_config_roundtrips(capsys):
    assert main(["print-config"]) == 0
    text = capsys.readouterr().out
    spec = parse_config(text)
    assert spec == RunSpec()
    assert "[update]" in text and "lambda_cmpo" in text and "kl_samples = 16" in text


def test_unknown_key_rejected():
    with pytest.raises(ValidationError, match="unknown config key"):
        parse_config("[train]\nbatch = 3\n")
    with pytest.raises(ValidationError, match="unknown config section"):
        parse_config("[misc]\nx = 1\n")


def test_optional_none_and_bool_parsing():
    spec = parse_config("[update]\nkl_samples = none\nmodel_policy_loss = false\n")
    assert spec.train.update.kl_samples is None and not spec.train.update.model_policy_loss


def test_bad_value_type():
    with pytest.raises(ValidationError, match="cannot parse"):
        parse_config("[train]\nbatch_size = many\n")


def test_bundled_config_resolves():
    spec = load_config("aliased_muesli.cfg")
    assert spec.train.update.variant == "muesli"
    assert spec.build_mdp().name == "aliased"


def test_dump_then_parse_preserves_overrides():
    spec = RunSpec().with_overrides({"variant": "ppo", "learning_rate": "0.01", "reward_scale": "1000"})
    assert parse_config(dump_config(spec)) == spec


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["run", "aliased_muesli.cfg", "--output-dir", str(out), "--seed", "4"] + TINY) == 0
    doc = json.loads((out / "results.json").read_text())
    assert set(doc) >= {"final_J", "policy", "tv_max", "tv_bound"}
    assert (out / "checkpoint.bin").read_bytes().startswith(b"MUESLI-LAB-PARAMS 1\n")
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["schema"] == "1" and len(rows) == 2
    assert "final J" in capsys.readouterr().out


def test_seed_flag_overrides_file(tmp_path):
    a, b, c = (tmp_path / x for x in "abc")
    main(["run", "aliased_muesli.cfg", "--output-dir", str(a), "--seed", "1"] + TINY)
    main(["run", "aliased_muesli.cfg", "--output-dir", str(b), "--seed", "1"] + TINY)
    main(["run", "aliased_muesli.cfg", "--output-dir", str(c), "--seed", "2"] + TINY)
    assert (a / "metrics.csv").read_text() == (b / "metrics.csv").read_text()
    assert (a / "metrics.csv").read_text() != (c / "metrics.csv").read_text()


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["run", "aliased_muesli.cfg"] + TINY) == 0
    assert (tmp_path / "env" / "results.json").exists()


def test_invalid_variant_exit_code_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[update]\nvariant = reinforce\n")
    assert main(["run", str(cfg), "--output-dir", str(tmp_path)]) == 2
    assert "valid variants: muesli" in capsys.readouterr().err


def test_missing_config_exit_code_2(tmp_path):
    assert main(["run", str(tmp_path / "nope.cfg")]) == 2


def test_usage_error_exit_code_2():
    with pytest.raises(SystemExit) as exc:
        main(["verify", "nonsense"])
    assert exc.value.code == 2


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit):
        main(["run", "--help"])
    out = capsys.readouterr().out
    for flag in ("--seed", "--output-dir", "--set"):
        assert flag in out


@pytest.mark.parametrize("argv,needle", [
    (["verify", "theorem", "--c", "1"], "0.462117"),
    (["verify-theorem", "--c", "0.5", "2"], "0.761594"),
    (["verify", "lemma", "--seeds", "100"], "100/100"),
    (["verify", "bound", "--seeds", "30"], "30/30"),
    (["verify", "gradients", "--points", "2"], "fd learner"),
])
def test_verify_commands(argv, needle, capsys):
    assert main(argv) == 0
    out = capsys.readouterr().out
    assert needle in out and "PASS" in out


def test_oracle_command(capsys):
    assert main(["oracle", "--policy", "0.625,0.375"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["J"] == pytest.approx(9 / 16)
    assert doc["q_obs"][0] == pytest.approx([0.25, 0.25])
    assert main(["oracle", "--aliased-p", "0.625"]) == 0
    assert json.loads(capsys.readouterr().out)["v2"] == pytest.approx(-0.25)


def test_oracle_bad_policy_exit_2():
    assert main(["oracle", "--policy", "0.5,0.2"]) == 2


def test_empty_sweep(tmp_path, capsys):
    assert main(["sweep", "--output-dir", str(tmp_path)]) == 0
    lines = (tmp_path / "aggregate.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("cell,params,status")


def test_sweep_grid(tmp_path):
    argv = ["sweep", "aliased_muesli.cfg", "--output-dir", str(tmp_path),
            "--grid", "lambda_cmpo=0.3,3", "--grid", "seed=1,2"] + TINY
    assert main(argv) == 0
    with open(tmp_path / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and all(r["status"] == "ok" for r in rows)
    assert rows[3]["params"] == "lambda_cmpo=3;seed=2"
    assert (tmp_path / "cell_003" / "metrics.csv").exists()


def test_sweep_records_failed_cell(tmp_path):
    argv = ["sweep", "aliased_muesli.cfg", "--output-dir", str(tmp_path),
            "--grid", "reward_scale=1,nan"] + TINY
    assert main(argv) == 1
    with open(tmp_path / "aggregate.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["status"] for r in rows] == ["ok", "failed"]
