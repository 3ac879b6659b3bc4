"""Command-line front end: config contract, overrides, artifacts, exit codes."""

import dataclasses
import json

import pytest

from gamma_ladder.cli import (
    CLAIM_KINDS,
    DEFAULT_TOLERANCES,
    RunConfig,
    config_from_dict,
    config_to_dict,
    emit_config,
    main,
    parse_config,
    run,
)
from gamma_ladder.errors import ConfigError

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def write_config(tmp_path, **overrides):
    raw = {"potential": "double-well", **overrides}
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("GAMMA_LADDER_THREADS", raising=False)
    monkeypatch.delenv("GAMMA_LADDER_OUT", raising=False)


# ---------------------------------------------------------------------------
# configuration


def test_defaults_and_round_trip():
    cfg = config_from_dict({"potential": "double-well"})
    assert cfg.ns == (200, 400, 800, 1600)
    assert cfg.claims == ("rates", "mixtures", "saddle", "ratios", "separation")
    assert cfg.tolerances == DEFAULT_TOLERANCES
    assert cfg.seed == 1905 and cfg.threads == 1 and cfg.out == "reports"
    assert cfg.levels is None and cfg.dirac_points == ()
    assert config_from_dict(json.loads(emit_config(cfg))) == cfg


def test_round_trip_with_every_field_set():
    cfg = config_from_dict(
        {
            "potential": "sin(2*pi*x1)^2",
            "dimension": 1,
            "ns": [16, 24, 48],
            "epsilon": 0.3,
            "epsilon_exponent": 0.45,
            "levels": [2, 1],
            "claims": ["point", "saddle"],
            "dirac_points": [[0.25], [0.5]],
            "tolerances": {"saddle": 0.2},
            "seed": 7,
            "out": "artifacts",
            "threads": 2,
            "rate_level": 2,
            "simulate_n": 16,
            "horizon": 10.5,
            "start": 3,
        }
    )
    assert cfg.levels == (1, 2)  # sorted
    assert cfg.dirac_points == ((0.25,), (0.5,))
    assert cfg.tolerances["saddle"] == 0.2
    assert cfg.tolerances["rates"] == DEFAULT_TOLERANCES["rates"]  # merged
    assert config_from_dict(json.loads(emit_config(cfg))) == cfg
    payload = config_to_dict(cfg)
    assert payload["schema_version"] == 1
    assert payload["dirac_points"] == [[0.25], [0.5]]


def test_claims_keep_order_and_drop_duplicates():
    cfg = config_from_dict({"potential": "p", "claims": ["saddle", "rates", "saddle"]})
    assert cfg.claims == ("saddle", "rates")


@pytest.mark.parametrize(
    "raw, message",
    [
        ([1, 2], "JSON object"),
        ({}, "'potential': required"),
        ({"potential": 3}, "expected str"),
        ({"potential": "p", "wat": 1}, "unknown config field"),
        ({"potential": "p", "dimension": 3}, "must be 1 or 2"),
        ({"potential": "p", "ns": []}, "nonempty list"),
        ({"potential": "p", "ns": [200, 200]}, "strictly increasing"),
        ({"potential": "p", "ns": [4, 8]}, "start at 8"),
        ({"potential": "p", "ns": [200.5]}, "expected int"),
        ({"potential": "p", "seed": True}, "expected int"),
        ({"potential": "p", "epsilon": -1.0}, "must be positive"),
        ({"potential": "p", "epsilon_exponent": 0.5}, "between 1/3 and 1/2"),
        ({"potential": "p", "levels": [0]}, "distinct integers"),
        ({"potential": "p", "levels": [1, 1]}, "distinct integers"),
        ({"potential": "p", "levels": "x"}, "nonempty list"),
        ({"potential": "p", "claims": ["nope"]}, "unknown claim"),
        ({"potential": "p", "claims": ["point"]}, "required when claims include 'point'"),
        ({"potential": "p", "claims": ["point"], "dirac_points": [0.25]}, "list of coordinates"),
        ({"potential": "p", "tolerances": {"bogus": 1.0}}, "unknown key"),
        ({"potential": "p", "tolerances": {"rates": -1.0}}, "must be positive"),
        ({"potential": "p", "tolerances": 3}, "expected an object"),
        ({"potential": "p", "threads": 0}, "must be >= 1"),
        ({"potential": "p", "rate_level": 0}, "must be >= 1"),
        ({"potential": "p", "simulate_n": 4}, "start at 8"),
        ({"potential": "p", "horizon": 0.0}, "must be positive"),
        ({"potential": "p", "out": 3}, "expected str"),
    ],
)
def test_config_rejections_name_the_field(raw, message):
    with pytest.raises(ConfigError, match=message):
        config_from_dict(raw)


def test_parse_config_reports_file_and_position(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "potential": \n}\n')
    with pytest.raises(ConfigError, match=r"bad\.json line 3"):
        parse_config(bad)
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.json")


# ---------------------------------------------------------------------------
# overrides and exit codes


def test_out_override_precedence(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path, out=str(tmp_path / "from-config"))
    assert main(["ladder", "--config", str(cfg)]) == 0
    assert (tmp_path / "from-config" / "ladder.json").exists()

    monkeypatch.setenv("GAMMA_LADDER_OUT", str(tmp_path / "from-env"))
    assert main(["ladder", "--config", str(cfg)]) == 0
    assert (tmp_path / "from-env" / "ladder.json").exists()

    assert main(["ladder", "--config", str(cfg), "--out", str(tmp_path / "from-flag")]) == 0
    assert (tmp_path / "from-flag" / "ladder.json").exists()
    out = capsys.readouterr().out
    assert "2 depth scale(s)" in out
    assert "terminal measure" in out


def test_bad_thread_env_is_a_config_error(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("GAMMA_LADDER_THREADS", "many")
    assert main(["ladder", "--config", str(cfg)]) == 1
    assert "must be an integer" in capsys.readouterr().err
    monkeypatch.setenv("GAMMA_LADDER_THREADS", "0")
    assert main(["ladder", "--config", str(cfg)]) == 1
    assert "thread count" in capsys.readouterr().err


def test_config_errors_exit_one(tmp_path, capsys):
    assert main(["verify", "--config", str(tmp_path / "none.json")]) == 1
    assert capsys.readouterr().err.startswith("error:")
    with pytest.raises(ConfigError, match="unknown subcommand"):
        run("bogus", RunConfig(potential="double-well"))


def test_verify_passes_and_writes_paired_artifacts(tmp_path, capsys):
    cfg = write_config(
        tmp_path, ns=[200, 400], claims=["ratios"], out=str(tmp_path / "reports")
    )
    assert main(["verify", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "0 failing" in out
    reports = tmp_path / "reports"
    summary = json.loads((reports / "summary.json").read_text())
    assert summary["verdict"] == "pass"
    assert summary["counts"]["fail"] == 0
    assert summary["run"]["potential"] == "double-well"
    assert "out" not in summary["run"] and "threads" not in summary["run"]
    for claim in summary["tables"]:
        assert (reports / f"{claim}.csv").exists()
        assert (reports / f"{claim}.png").read_bytes().startswith(PNG_MAGIC)
    # both depth scales were covered
    levels = {s["level"] for s in summary["expansion"]["scales"]}
    assert levels == {1, 2}


def test_verify_failure_exits_two(tmp_path, capsys):
    cfg = write_config(
        tmp_path,
        ns=[200, 256],
        claims=["ratios"],
        tolerances={"ratios": 1e-300},
        out=str(tmp_path / "reports"),
    )
    assert main(["verify", "--config", str(cfg)]) == 2
    assert "fail" in capsys.readouterr().out
    summary = json.loads((tmp_path / "reports" / "summary.json").read_text())
    assert summary["verdict"] == "fail"


def test_verify_artifacts_are_byte_identical_across_threads(tmp_path, capsys):
    cfg = write_config(tmp_path, ns=[64, 96], claims=["rates"])
    code_a = main(["verify", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"])
    code_b = main(["verify", "--config", str(cfg), "--out", str(tmp_path / "b"), "--threads", "3"])
    capsys.readouterr()
    assert code_a == code_b
    files_a = sorted(p.name for p in (tmp_path / "a").iterdir())
    files_b = sorted(p.name for p in (tmp_path / "b").iterdir())
    assert files_a == files_b and files_a
    for name in files_a:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_verify_respects_claim_selection(tmp_path, capsys):
    cfg = write_config(tmp_path, ns=[64, 96], claims=["saddle"], out=str(tmp_path / "r"))
    code = main(["verify", "--config", str(cfg)])
    assert code in (0, 2)
    capsys.readouterr()
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert len(summary["tables"]) == 1
    (claim,) = summary["tables"]
    assert claim.startswith("saddle-recovery-")
    assert summary["expansion"]["order_1_over_n"]["claims"] == [claim]
    assert summary["expansion"]["scales"] == []
    assert summary["expansion"]["leading"]["claims"] == []


def test_analyze_writes_report_and_figure(tmp_path, capsys):
    cfg = write_config(tmp_path, out=str(tmp_path / "out"))
    cfg.write_text(json.dumps({"potential": "single-well-cosine", "out": str(tmp_path / "out")}))
    assert main(["analyze", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "critical points:" in out
    assert "barrier height" in out
    payload = json.loads((tmp_path / "out" / "landscape.json").read_text())
    assert payload["schema_version"] == 1
    assert payload["validation"]["all_pass"] is True
    assert (tmp_path / "out" / "landscape.png").read_bytes().startswith(PNG_MAGIC)


def test_analyze_names_the_failed_assumption(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "potential": "cos(4*pi*x1) - 0.1*cos(2*pi*x1)",
                "dimension": 1,
                "out": str(tmp_path / "out"),
            }
        )
    )
    assert main(["analyze", "--config", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "validation failed" in out
    assert "f5_equal_heights" in out
    payload = json.loads((tmp_path / "out" / "landscape.json").read_text())
    assert payload["validation"]["f5_equal_heights"]["pass"] is False
    assert len(payload["validation"]["f5_equal_heights"]["heights"]) == 2


def test_rates_subcommand_emits_one_scale(tmp_path, capsys):
    cfg = write_config(tmp_path, ns=[64, 96], rate_level=1, out=str(tmp_path / "r"))
    code = main(["rates", "--config", str(cfg)])
    assert code in (0, 2)
    capsys.readouterr()
    summary = json.loads((tmp_path / "r" / "summary.json").read_text())
    assert set(summary["tables"]) == {"well-rate-scale1-1-to-2", "well-rate-scale1-2-to-1"}

    too_deep = write_config(tmp_path, rate_level=5)
    assert main(["rates", "--config", str(too_deep)]) == 1
    assert "exceeds the depth count" in capsys.readouterr().err


def test_simulate_is_deterministic_and_reports_occupation(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "potential": "single-well-cosine",
                "simulate_n": 16,
                "horizon": 5.0,
                "seed": 11,
                "out": str(tmp_path / "a"),
            }
        )
    )
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert "simulated" in capsys.readouterr().out
    trajectory = (tmp_path / "a" / "trajectory.csv").read_text().splitlines()
    assert trajectory[0] == "jump,time,state,x1"
    # default start is the potential minimum, state 0 for -cos
    assert trajectory[1].split(",")[2] == "0"
    empirical = (tmp_path / "a" / "empirical.csv").read_text().splitlines()
    assert empirical[0] == "state,x1,occupation,stationary"
    occupation = sum(float(line.split(",")[2]) for line in empirical[1:])
    stationary = sum(float(line.split(",")[3]) for line in empirical[1:])
    assert occupation == pytest.approx(1.0, abs=1e-9)
    assert stationary == pytest.approx(1.0, abs=1e-9)

    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    for name in ("trajectory.csv", "empirical.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_start_validation(tmp_path, capsys):
    cfg = tmp_path / "config.json"
    cfg.write_text(
        json.dumps(
            {
                "potential": "single-well-cosine",
                "simulate_n": 16,
                "horizon": 2.0,
                "start": 99,
                "out": str(tmp_path / "out"),
            }
        )
    )
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "not on the n=16 grid" in capsys.readouterr().err
    cfg.write_text(
        json.dumps(
            {
                "potential": "single-well-cosine",
                "simulate_n": 16,
                "horizon": 2.0,
                "start": 3,
                "out": str(tmp_path / "out"),
            }
        )
    )
    assert main(["simulate", "--config", str(cfg)]) == 0
    capsys.readouterr()
    first = (tmp_path / "out" / "trajectory.csv").read_text().splitlines()[1]
    assert first.split(",")[2] == "3"


def test_claim_kinds_and_tolerance_families_are_pinned():
    assert CLAIM_KINDS == ("rates", "mixtures", "saddle", "point", "ratios", "separation")
    assert DEFAULT_TOLERANCES == {
        "rates": 0.10,
        "mixtures": 0.15,
        "saddle": 0.15,
        "point": 0.05,
        "ratios": 1e-6,
        "mass": 1e-3,
        "separation": 1e-2,
    }
    # the config record is hashable state: replacing a field keeps the rest
    cfg = RunConfig(potential="p")
    assert dataclasses.replace(cfg, threads=4).threads == 4
    assert dataclasses.replace(cfg, threads=4).potential == "p"
