import json
import math

import pytest

from nikodym.cli import main
from nikodym.database import SessionLocal
from nikodym.errors import ConfigurationError
from nikodym.services import run_catalog
from nikodym.services.presets import list_presets
from nikodym.services.runner import (
    build_config,
    config_hash,
    parse_scales,
    read_config_file,
    rows_frame,
    run_directory,
    write_csv,
)

CUTOFF_RUN = """\
[run]
experiment = "cutoff-suite"
curve = "circle2d"

[options]
points = 2000
"""


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_parse_scales():
    assert parse_scales("2^-3..2^-5") == [0.125, 0.0625, 0.03125]
    assert parse_scales("2^4..2^6") == [16.0, 32.0, 64.0]
    assert parse_scales("0.1, 0.05") == [0.1, 0.05]
    assert parse_scales("2^(-7)") == [2.0 ** -7]
    with pytest.raises(ConfigurationError):
        parse_scales("0.1..0.01")
    with pytest.raises(ConfigurationError):
        parse_scales("small")


def test_config_errors_carry_line_numbers(tmp_path):
    with pytest.raises(ConfigurationError) as exc:
        read_config_file(_write(tmp_path, '[run]\nexperiment = "cutoff-suite"\nbogus = 1\n'))
    assert exc.value.line == 3

    with pytest.raises(ConfigurationError) as exc:
        read_config_file(_write(tmp_path, '[run]\nexperiment = "cutoff-suite"\n\n[extra]\nx = 1\n'))
    assert exc.value.line == 4

    with pytest.raises(ConfigurationError) as exc:
        read_config_file(_write(tmp_path, '[run]\nexperiment =\n'))
    assert exc.value.line == 2

    text = '[run]\nexperiment = "cutoff-suite"\n\n[grid]\nX = 1.5\n'
    data, text = read_config_file(_write(tmp_path, text))
    with pytest.raises(ConfigurationError) as exc:
        build_config(data, {}, text)
    assert exc.value.line == 5


def test_dyadic_strings_in_config_files(tmp_path):
    data, _ = read_config_file(_write(tmp_path, '[run]\nexperiment = "sharpness-range"\ndelta_grid = "2^-3..2^-4"\n'))
    assert data["delta_grid"] == [0.125, 0.0625]


def test_layering_preset_file_then_overrides():
    cfg = build_config({"delta_grid": [0.25], "grid": {"nx": 32}}, {"experiment": "sharpness-range"})
    assert cfg.delta_grid == [0.25]
    assert cfg.grid.nx == 32 and cfg.grid.X == 4.0
    cfg = build_config({"experiment": "sharpness-range", "delta_grid": [0.25]}, {"delta_grid": [0.125]})
    assert cfg.delta_grid == [0.125]
    assert build_config({}, {"experiment": "sharpness-range"}).delta_grid == [2.0 ** -k for k in range(4, 8)]
    with pytest.raises(ConfigurationError):
        build_config({}, {})
    with pytest.raises(ConfigurationError):
        build_config({}, {"experiment": "nope"})
    with pytest.raises(ConfigurationError):
        build_config({}, {"experiment": "lemma-audit", "N": 3})


def test_config_hash_ignores_output_and_workers():
    a = build_config({}, {"experiment": "cutoff-suite", "output_dir": "a", "workers": 1})
    b = build_config({}, {"experiment": "cutoff-suite", "output_dir": "b", "workers": 8})
    c = build_config({}, {"experiment": "cutoff-suite", "seeds": [1]})
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(c)
    assert len(config_hash(a)) == 16


def test_run_directories_never_overwrite(tmp_path):
    first = run_directory(tmp_path, "abc")
    second = run_directory(tmp_path, "abc")
    assert first.name == "abc" and second.name == "abc-1"


def test_rows_are_ordered_and_sorted(tmp_path):
    rows = [{"delta": 0.25, "value": 1.0}, {"delta": 0.125, "value": 2.0, "note": math.nan}]
    df = rows_frame(rows)
    assert list(df.columns) == ["delta", "value", "note"]
    assert df["delta"].tolist() == [0.125, 0.25]
    write_csv(rows, tmp_path / "data.csv")
    raw = (tmp_path / "data.csv").read_bytes()
    assert b"\r" not in raw
    assert raw.splitlines()[1].startswith(b"1.250000000000e-01")


def test_cli_config_error_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = _write(tmp_path, '[run]\nexperiment = "cutoff-suite"\nbogus = 1\n')
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 2
    assert "run.toml:3" in capsys.readouterr().err
    assert not out.exists()
    assert main(["run", "--preset", "nope", "--out", str(out)]) == 2
    assert not out.exists()


def test_cli_runs_are_reproducible(tmp_path):
    out = tmp_path / "out"
    cfg = _write(tmp_path, CUTOFF_RUN)
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(out), "--workers", "2"]) == 0
    first, second = sorted(out.iterdir(), key=lambda p: len(p.name))
    assert second.name == f"{first.name}-1"
    assert (first / "data.csv").read_bytes() == (second / "data.csv").read_bytes()

    manifest = json.loads((first / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["config_hash"] == first.name
    assert manifest["status"] == "ok"
    assert sorted(manifest["files"]) == sorted(p.name for p in first.iterdir())
    report = json.loads((first / "report.json").read_text(encoding="utf-8"))
    assert report["schema"] == 1 and report["passed"]

    with SessionLocal() as db:
        row = run_catalog.latest_for_hash(db, first.name)
    assert row is not None
    assert row.output_path == str(second)


def test_presets_listing(capsys):
    names = [p.name for p in list_presets()]
    assert names == sorted(names)
    for required in ("theorem1-scaling", "sharpness-log", "sharpness-range", "lemma-audit", "sobolev-check",
                     "aniso-admissibility"):
        assert required in names
    assert list_presets("no-such-preset") == []
    assert main(["presets", "sharpness"]) == 0
    listed = capsys.readouterr().out
    assert "sharpness-log" in listed and "sharpness-range" in listed
    assert "curve-suite" not in listed
