"""Config resolution, CSV artifacts, subcommands, exit codes."""

import numpy as np
import pytest

from bayesfir import cli
from bayesfir.simgen import load_dataset

BASE = {
    "n": "20",
    "n_total": "240",
    "n_warmup": "60",
    "nk_sweep": "30",
    "snr": "5",
    "runs": "2",
    "seed": "3",
    "methods": "sgp,em1",
}


def base_args(out, extra=()):
    args = []
    for key, val in BASE.items():
        args.extend([f"--{key.replace('_', '-')}", val])
    args.extend(["--out", str(out)])
    args.extend(extra)
    return args


def read_csv(path):
    """(comment lines, column names, data rows) of a trace/summary file."""
    comments = []
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                comments.append(line)
            else:
                rows.append(line.split(","))
    return comments, rows[0], rows[1:]


def test_resolve_config_defaults_and_precedence():
    resolved = cli.resolve_config({}, {k: None for k in cli.CONFIG_SCHEMA})
    assert resolved["n"] == 80
    assert resolved["nk_sweep"] == (1, 10, 50)
    assert resolved["methods"] == ("bb", "sgp", "bfgs", "em", "em1", "em2", "opt")
    over = {k: None for k in cli.CONFIG_SCHEMA}
    over["n"] = "12"
    resolved = cli.resolve_config({"n": "9", "snr": "2.5"}, over)
    assert resolved["n"] == 12  # flag beats file
    assert resolved["snr"] == 2.5  # file beats default


def test_resolve_config_rejects_bad_values():
    empty = {k: None for k in cli.CONFIG_SCHEMA}
    for key, bad in (
        ("seed", "-1"),
        ("workers", "0"),
        ("nk_sweep", "10,0"),
        ("methods", "sgp,warp"),
        ("mode", "sometimes"),
        ("n", "eighty"),
        ("lambda_only", "perhaps"),
    ):
        over = dict(empty)
        over[key] = bad
        with pytest.raises(cli.ConfigError):
            cli.resolve_config({}, over)


def test_lambda_only_rewrites_method_tokens():
    over = {k: None for k in cli.CONFIG_SCHEMA}
    over["methods"] = "bb,sgp,bfgs,em,opt,em1"
    over["lambda_only"] = True
    resolved = cli.resolve_config({}, over)
    assert resolved["methods"] == ("bb_lambda", "sgp_lambda", "bfgs_lambda", "em2", "opt_lambda", "em1")


def test_config_file_parsing(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\nn = 10\nsnr=2.0\n\nmethods = sgp\n")
    assert cli.parse_config_file(str(path)) == {"n": "10", "snr": "2.0", "methods": "sgp"}
    bad = tmp_path / "bad.cfg"
    bad.write_text("n = 10\nmystery = 4\n")
    with pytest.raises(cli.ConfigError, match="line 2"):
        cli.parse_config_file(str(bad))
    ugly = tmp_path / "ugly.cfg"
    ugly.write_text("n 10\n")
    with pytest.raises(cli.ConfigError, match="line 1"):
        cli.parse_config_file(str(ugly))


def strip_timing(path):
    """CSV lines with the per-batch and cumulative wall-time columns removed."""
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                out.append(line)
                continue
            cells = line.split(",")
            keep = [c for i, c in enumerate(cells) if i not in (len(cells) - 1, len(cells) - 2)]
            out.append(",".join(keep))
    return out


def test_single_writes_trace_system_and_dataset(tmp_path):
    assert cli.main(["single"] + base_args(tmp_path / "a")) == 0
    header, columns, rows = read_csv(tmp_path / "a" / "single_trace.csv")
    assert header[0] == f"# schema={cli.SCHEMA_TRACE}"
    assert header[1].startswith("# config: ")
    assert "lambda0=ybar/(nbar*n)" in header[1]
    assert columns == list(cli.TRACE_COLUMNS)
    # 2 methods x 1 batch size x (240 - 60) / 30 batches
    assert len(rows) == 2 * 6
    by_method = {m: [r for r in rows if r[1] == m] for m in ("sgp", "em1")}
    assert all(len(v) == 6 for v in by_method.values())
    assert [r[3] for r in by_method["sgp"]] == [str(k) for k in range(1, 7)]
    fits = [float(r[5]) for r in rows]
    assert all(np.isfinite(fits))
    h = np.loadtxt(tmp_path / "a" / "system.csv", skiprows=3)
    assert h.shape == (20,)
    u, y = load_dataset(tmp_path / "a" / "dataset.csv")
    assert u.shape == (240,)
    # a second run reproduces everything except wall-clock columns and the
    # config comment (which embeds the output directory)
    assert cli.main(["single"] + base_args(tmp_path / "b")) == 0
    assert strip_timing(tmp_path / "a" / "single_trace.csv")[2:] == strip_timing(tmp_path / "b" / "single_trace.csv")[2:]

    def sans_config(path):
        return [ln for ln in path.read_text().splitlines() if not ln.startswith("# config:")]

    assert sans_config(tmp_path / "a" / "system.csv") == sans_config(tmp_path / "b" / "system.csv")
    assert sans_config(tmp_path / "a" / "dataset.csv") == sans_config(tmp_path / "b" / "dataset.csv")


def test_nk_flag_overrides_the_sweep(tmp_path):
    assert cli.main(["single"] + base_args(tmp_path, ["--nk", "60"])) == 0
    _, _, rows = read_csv(tmp_path / "single_trace.csv")
    assert len(rows) == 2 * 3  # (240 - 60) / 60 batches per method
    assert {r[0] for r in rows} == {"60"}


def test_montecarlo_outputs_and_worker_independence(tmp_path):
    assert cli.main(["montecarlo"] + base_args(tmp_path / "w1", ["--nk", "30"])) == 0
    header, columns, rows = read_csv(tmp_path / "w1" / "runs.csv")
    assert header[0] == f"# schema={cli.SCHEMA_TRACE}"
    assert len(rows) == 2 * 2 * 6  # runs x methods x batches
    sheader, scols, srows = read_csv(tmp_path / "w1" / "summary.csv")
    assert sheader[0] == f"# schema={cli.SCHEMA_SUMMARY}"
    assert scols == list(cli.SUMMARY_COLUMNS)
    assert {r[0] for r in srows} == {"sgp", "em1"}
    for row in srows:
        med, q1, q3 = float(row[2]), float(row[3]), float(row[4])
        assert q1 <= med <= q3
        token_rows = [r for r in rows if r[1] == row[0]]
        finals = [r for r in token_rows if r[3] == "6"]
        assert abs(np.median([float(r[5]) for r in finals]) - med) < 1e-12
        assert abs(sum(float(r[10]) for r in finals) - float(row[5])) < 1e-9
    # fanning out across processes must not change any numbers
    assert cli.main(["montecarlo"] + base_args(tmp_path / "w2", ["--nk", "30", "--workers", "2"])) == 0
    assert strip_timing(tmp_path / "w1" / "runs.csv")[2:] == strip_timing(tmp_path / "w2" / "runs.csv")[2:]


def test_stream_reproduces_single_trace(tmp_path):
    assert cli.main(["single"] + base_args(tmp_path)) == 0
    assert cli.main(
        ["stream"] + base_args(tmp_path, ["--nk", "30", str(tmp_path / "dataset.csv")])
    ) == 0
    _, tcols, trows = read_csv(tmp_path / "single_trace.csv")
    sheader, scols, srows = read_csv(tmp_path / "stream_trace.csv")
    assert sheader[0] == f"# schema={cli.SCHEMA_STREAM}"
    assert scols == [c for c in cli.TRACE_COLUMNS if c != "fit"]
    assert len(srows) == len(trows)
    fit_idx = tcols.index("fit")
    for srow, trow in zip(srows, trows):
        trimmed = trow[:fit_idx] + trow[fit_idx + 1:]
        assert srow[1:-2] == trimmed[1:-2]  # run_id and wall time may differ


def test_stream_input_errors_exit_2(tmp_path, capsys):
    missing = cli.main(["stream", str(tmp_path / "nope.csv")])
    assert missing == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("u,y\n1.0,2.0\n3.0\n")
    assert cli.main(["stream", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err
    short = tmp_path / "short.csv"
    short.write_text("u,y\n" + "".join(f"{i}.0,{i}.0\n" for i in range(5)))
    assert cli.main(["stream", "--n-warmup", "40", str(short)]) == 2
    empty = tmp_path / "empty.csv"
    empty.write_text("u,y\n")
    assert cli.main(["stream", str(empty)]) == 2


def test_usage_errors_exit_2(tmp_path, capsys):
    assert cli.main(["single", "--methods", "warp", "--out", str(tmp_path)]) == 2
    assert "warp" in capsys.readouterr().err
    assert cli.main(["single", "--seed", "-1", "--out", str(tmp_path)]) == 2
    assert cli.main(["single", "--nk", "0", "--out", str(tmp_path)]) == 2
    assert cli.main(["single", "--nk-sweep", "5,0", "--out", str(tmp_path)]) == 2
    assert cli.main(["montecarlo", "--workers", "0", "--out", str(tmp_path)]) == 2
    assert cli.main(["single", "--config", str(tmp_path / "absent.cfg")]) == 2


def test_runtime_failures_exit_3(tmp_path, monkeypatch, capsys):
    def boom(resolved):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(cli, "cmd_montecarlo", boom)
    assert cli.main(["montecarlo", "--out", str(tmp_path)]) == 3
    assert "disk on fire" in capsys.readouterr().err


def test_csv_writes_are_atomic(tmp_path):
    assert cli.main(["single"] + base_args(tmp_path)) == 0
    leftovers = [p.name for p in tmp_path.iterdir() if p.name.endswith(".tmp")]
    assert leftovers == []
