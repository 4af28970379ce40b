import json

import pandas as pd
import pytest

from src.config.settings import Settings
from src.core.exceptions import ConfigError
from src.main import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, build_parser, main, parse_config
from src.services.experiment_service import CSV_COLUMNS, parse_axis_values

FLOOD = ["--n", "100", "--topology", "regular:4", "--mode", "flood_only"]


def test_simulate_writes_runs_and_aggregates(tmp_path):
    out = tmp_path / "flood.csv"
    code = main(["simulate", *FLOOD, "--trials", "3", "--output", str(out)])
    assert code == EXIT_OK
    assert out.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)

    frame = pd.read_csv(out, dtype={"run_id": str})
    assert list(frame["run_id"]) == ["0", "1", "2", "mean", "std"]
    stats = frame.set_index("run_id")
    assert stats.loc["mean", "total_msgs"] == 301
    assert stats.loc["std", "total_msgs"] == 0
    assert list(frame["seed"][:3]) == [0, 1, 2]

    summary = json.loads((tmp_path / "flood.summary.json").read_text())
    assert summary["runs"] == 3
    echo = json.loads((tmp_path / "flood.config.json").read_text())
    assert echo["config"]["trials"] == 3
    assert echo["config"]["mode"] == "flood_only"


def test_simulate_is_byte_identical_across_reruns(tmp_path):
    args = [*FLOOD, "--adversary-fraction", "0.2", "--trials", "2", "--trace"]
    assert main(["simulate", *args, "--output", str(tmp_path / "a.csv")]) == EXIT_OK
    assert main(["simulate", *args, "--output", str(tmp_path / "b.csv")]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.run1.ndjson").read_bytes() == (tmp_path / "b.run1.ndjson").read_bytes()


def test_auto_d_max_is_echoed(tmp_path):
    out = tmp_path / "full.csv"
    code = main(
        ["simulate", "--n", "40", "--topology", "regular:4", "--k", "3", "--output", str(out)]
    )
    assert code == EXIT_OK
    echo = json.loads((tmp_path / "full.config.json").read_text())
    assert echo["config"]["d_max"] == "auto"
    assert len(echo["resolved"]["d_max"]) == 1
    assert echo["resolved"]["d_max"][0] >= 1


def test_missing_k_in_full_mode_is_a_config_error(tmp_path):
    code = main(["simulate", "--n", "40", "--output", str(tmp_path / "x.csv")])
    assert code == EXIT_CONFIG


def test_invalid_field_names_the_field():
    args = build_parser().parse_args(["simulate", "--n", "-3"])
    with pytest.raises(ConfigError) as info:
        parse_config(args, Settings(SEED=None))
    assert info.value.field == "n"


def test_flags_override_file_and_env(tmp_path):
    config_file = tmp_path / "exp.json"
    config_file.write_text(json.dumps({"trials": 100, "mode": "flood_only", "seed": 1}))
    args = build_parser().parse_args(["simulate", "--config", str(config_file), "--trials", "5"])
    config = parse_config(args, Settings(SEED=None))
    assert config.trials == 5
    assert config.seed == 1

    assert parse_config(args, Settings(SEED=42)).seed == 42
    args = build_parser().parse_args(
        ["simulate", "--config", str(config_file), "--seed", "7"]
    )
    assert parse_config(args, Settings(SEED=42)).seed == 7


def test_unreadable_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_event_cap_exits_with_runtime_code(tmp_path):
    code = main(["simulate", *FLOOD, "--event-cap", "10", "--output", str(tmp_path / "x.csv")])
    assert code == EXIT_RUNTIME


def test_infeasible_topology_is_a_config_error(tmp_path):
    code = main(
        ["simulate", "--n", "5", "--topology", "regular:3", "--mode", "flood_only",
         "--output", str(tmp_path / "x.csv")]
    )
    assert code == EXIT_CONFIG


def test_sweep_rows_are_tagged_with_axis_value(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(
        ["sweep", *FLOOD, "--trials", "2", "--axis", "adversary_fraction",
         "--values", "0.05,0.2", "--output", str(out)]
    )
    assert code == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["axis", "value", *CSV_COLUMNS]
    assert len(frame) == 4
    assert list(frame["value"]) == [0.05, 0.05, 0.2, 0.2]
    assert set(frame["axis"]) == {"adversary_fraction"}


def test_sweep_over_group_size(tmp_path):
    out = tmp_path / "k.csv"
    code = main(
        ["sweep", "--n", "10", "--topology", "line", "--mode", "dc_only", "--k", "4",
         "--no-length-announcement", "--axis", "k", "--values", "4,10", "--output", str(out)]
    )
    assert code == EXIT_OK
    frame = pd.read_csv(out)
    # n=10 splits into two groups of 5 for k=4 and one group of 10 for k=10
    assert list(frame["phase1_msgs"]) == [60, 270]


@pytest.mark.parametrize("values", ["", " , "])
def test_sweep_without_values(tmp_path, values):
    code = main(
        ["sweep", *FLOOD, "--axis", "k", "--values", values, "--output", str(tmp_path / "s.csv")]
    )
    assert code == EXIT_CONFIG


def test_sweep_rejects_unknown_axis(tmp_path):
    code = main(
        ["sweep", *FLOOD, "--axis", "link_delay", "--values", "1,2",
         "--output", str(tmp_path / "s.csv")]
    )
    assert code == EXIT_CONFIG


def test_parse_axis_values():
    assert parse_axis_values("k", ["4", "6"]) == [4, 6]
    assert parse_axis_values("d_max", ["auto", "2"]) == ["auto", 2]
    assert parse_axis_values("adversary_fraction", ["0.1"]) == [0.1]
    with pytest.raises(ConfigError):
        parse_axis_values("n", ["many"])


def test_topology_info(capsys):
    args = ["topology-info", "--n", "10", "--topology", "line", "--mode", "flood_only"]
    assert main(args) == EXIT_OK
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info == {"topology": "line", "n": 10, "edges": 9, "diameter": 9, "auto_d_max": 5}


def test_metrics_export(tmp_path, monkeypatch):
    metrics = tmp_path / "metrics.prom"
    monkeypatch.setenv("PRIVBCAST_METRICS_ENABLED", "true")
    monkeypatch.setenv("PRIVBCAST_METRICS_PATH", str(metrics))
    assert main(["simulate", *FLOOD, "--output", str(tmp_path / "m.csv")]) == EXIT_OK
    assert "privbcast_envelopes_total" in metrics.read_text()
