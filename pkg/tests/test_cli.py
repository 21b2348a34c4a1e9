import json
import os

import pytest

from citetraj.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_NUMERIC,
    EXIT_OK,
    build_parser,
    main,
    read_config_file,
)
from citetraj.errors import ConfigError


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rc = main(["simulate", "--n-items", "150", "--seed", "2",
               "--output-dir", str(d)])
    assert rc == EXIT_OK
    return d


def test_run_end_to_end(workspace):
    rc = main(["run", "--input", str(workspace / "corpus.jsonl"),
               "--output-dir", str(workspace), "--seed", "2"])
    assert rc == EXIT_OK
    assert (workspace / "model.json").exists()
    plot_dir = workspace / "plots"
    assert (plot_dir / "gof_scatter.csv").exists()


def test_ingest_reports_counts(workspace, capsys):
    rc = main(["ingest", "--input", str(workspace / "corpus.jsonl"),
               "--output-dir", str(workspace), "--min-total", "10"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "kept" in out and "dropped" in out


def test_label_and_assignments_csv(workspace):
    rc = main(["label", "--output-dir", str(workspace)])
    assert rc == EXIT_OK
    lines = (workspace / "assignments.csv").read_text().splitlines()
    assert lines[0] == "id,cluster,label"
    assert len(lines) == 1 + 150


def test_sensitivity_and_plots(workspace):
    rc = main(["sensitivity", "--output-dir", str(workspace),
               "--thresholds", "0,5", "--k-range", "2:4",
               "--methods", "kmeans,ward"])
    assert rc == EXIT_OK
    rc = main(["plot", "--output-dir", str(workspace),
               "--figures", "robustness,thresholds"])
    assert rc == EXIT_OK
    assert (workspace / "plots" / "robustness.svg").exists()


def test_missing_input_is_data_error(tmp_path, capsys):
    rc = main(["ingest", "--input", str(tmp_path / "ghost.csv"),
               "--output-dir", str(tmp_path)])
    assert rc == EXIT_DATA
    assert "cannot read" in capsys.readouterr().err


def test_malformed_csv_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,y1,y2\np1,0,1\np2,7\n")
    rc = main(["ingest", "--input", str(bad), "--output-dir", str(tmp_path)])
    assert rc == EXIT_DATA
    assert "line 3" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    rc = main(["fit", "--input", "whatever.csv", "--output-dir", str(tmp_path),
               "--fve", "1.5"])
    assert rc == EXIT_CONFIG


def test_numerical_failure_exit_code(workspace, tmp_path, capsys):
    rc = main(["fit", "--input", str(workspace / "corpus.jsonl"),
               "--output-dir", str(tmp_path), "--bandwidth", "1e-9"])
    assert rc == EXIT_NUMERIC
    assert "mean" in capsys.readouterr().err


def test_unknown_figure_is_config_error(workspace, capsys):
    rc = main(["plot", "--output-dir", str(workspace), "--figures", "nope"])
    assert rc == EXIT_CONFIG


def test_cluster_requires_model(tmp_path, capsys):
    rc = main(["cluster", "--output-dir", str(tmp_path)])
    assert rc == EXIT_DATA
    assert "fit" in capsys.readouterr().err


def test_cluster_adds_method(workspace):
    rc = main(["cluster", "--output-dir", str(workspace), "--method", "ward",
               "--k-clusters", "3"])
    assert rc == EXIT_OK
    data = json.loads((workspace / "model.json").read_text())
    assert "3" in data["clusters"]["ward"]


class TestConfigFile:
    def test_parse_and_precedence(self, tmp_path):
        cfg = tmp_path / "opts.conf"
        cfg.write_text(
            "# options\n"
            "seed = 7\n"
            "k-clusters = 3\n"
            "standardize = true\n"
            "m_wsb = 25.5\n"
        )
        opts = read_config_file(str(cfg))
        assert opts == {"seed": 7, "k_clusters": 3, "standardize": True,
                        "m_wsb": 25.5}
        parser = build_parser()
        args = parser.parse_args(["fit", "--config", str(cfg), "--seed", "9",
                                  "--input", "x.csv"])
        from citetraj.cli import _merge_config

        merged = _merge_config(args)
        assert merged.seed == 9          # flag beats file
        assert merged.k_clusters == 3    # file beats default
        assert merged.standardize is True
        assert merged.m_wsb == 25.5
        assert merged.jobs == 1          # default

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "opts.conf"
        cfg.write_text("mystery = 1\n")
        with pytest.raises(ConfigError, match="unknown config keys"):
            read_config_file(str(cfg))

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            read_config_file("/nonexistent/opts.conf")

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "opts.conf"
        cfg.write_text("just some words\n")
        with pytest.raises(ConfigError, match="key = value"):
            read_config_file(str(cfg))
