import filecmp
import json

import numpy as np
import pytest

from pshlab.cli import ConfigError, main, parse_config, run
from pshlab.field_grid import load_field


BASE = """
command = envelope
backend = grid
resolution = 96
radius = 1.0
lambda = 0.25
tol = 1e-9

[potential]
builtin flat
"""


def test_parse_builtin():
    cfg = parse_config(BASE)
    assert cfg.command == "envelope"
    assert cfg.potential.name == "flat"
    assert cfg.lam == 0.25
    assert "c" in cfg.defaults_used


def test_parse_unknown_key_line_numbered():
    with pytest.raises(ConfigError, match="line 3: unknown key"):
        parse_config("command = envelope\nresolution = 96\nwibble = 2\n"
                     "[potential]\nbuiltin flat\n")


def test_parse_lambda_exceeds_cutoff():
    text = ("command = geodesic\nlambda = 0.9\nc = 0.5\n"
            "[potential]\nbuiltin flat\n")
    with pytest.raises(ConfigError, match="lambda exceeds cutoff"):
        parse_config(text)


def test_parse_non_psh_potential():
    text = ("command = envelope\nresolution = 96\n"
            "[potential]\nreharm 1.0 2\n")
    with pytest.raises(ConfigError, match="plurisubharmonic"):
        parse_config(text)


def test_parse_missing_potential():
    with pytest.raises(ConfigError, match="potential"):
        parse_config("command = envelope\n")


def test_term_list_matches_builtin(tmp_path):
    term_text = BASE.replace("builtin flat", "polyrad 1.0 1")
    cfg_a = parse_config(BASE)
    cfg_b = parse_config(term_text)
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert run(cfg_a, out_a) == 0
    assert run(cfg_b, out_b) == 0
    for name in ("envelope.csv", "deficit.csv", "boundary.csv"):
        assert (out_a / name).read_text() == (out_b / name).read_text()


def test_envelope_command_outputs_reparse(tmp_path):
    cfg = parse_config(BASE)
    out = tmp_path / "run"
    assert run(cfg, out) == 0
    env = load_field(out / "envelope.csv")
    assert env.grid.resolution == 96
    meta = dict(line.split(" = ", 1) for line in
                (out / "metadata.txt").read_text().splitlines())
    assert meta["backend"].startswith("grid")
    bd = np.loadtxt(out / "boundary.csv", delimiter=",", comments="#")
    r = np.hypot(bd[:, 0], bd[:, 1])
    assert np.all(np.abs(r - 0.5) < 3 * env.grid.h)


def test_determinism_bitwise(tmp_path):
    cfg = parse_config(BASE)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    run(cfg, out1)
    run(cfg, out2)
    for f in sorted(out1.iterdir()):
        assert (out2 / f.name).read_bytes() == f.read_bytes()


def test_flow_empty_lambdas_errors(tmp_path):
    text = BASE.replace("command = envelope", "command = flow")
    cfg = parse_config(text)
    with pytest.raises(ConfigError, match="lambdas"):
        run(cfg, tmp_path / "flow")


def test_flow_masses_table(tmp_path):
    text = BASE.replace("command = envelope", "command = flow") \
        + "lambdas = 0.1,0.2,0.3\n"
    # keys must precede the [potential] section
    text = ("command = flow\nbackend = grid\nresolution = 96\n"
            "lambdas = 0.1,0.2,0.3\ntol = 1e-9\n[potential]\nbuiltin flat\n")
    cfg = parse_config(text)
    out = tmp_path / "flow"
    assert run(cfg, out) == 0
    rows = np.loadtxt(out / "masses.csv", delimiter=",", comments="#")
    assert rows.shape == (3, 3)
    assert np.all(np.abs(rows[:, 1] - rows[:, 0]) < 8e-3)
    meta = dict(line.split(" = ", 1) for line in
                (out / "metadata.txt").read_text().splitlines())
    assert float(meta["lambda_certified"]) > 0.05


def test_geodesic_command(tmp_path):
    text = ("command = geodesic\nbackend = oracle\nresolution = 96\n"
            "lambda_nodes = 16\nt_count = 48\nc = 0.6\n"
            "[potential]\nbuiltin flat\n")
    cfg = parse_config(text)
    out = tmp_path / "geo"
    assert run(cfg, out) == 0
    u = np.loadtxt(out / "u.csv", delimiter=",", comments="#")
    assert u.shape == (48, 96 * 96)
    assert (out / "slices" / "slice_000.csv").exists()
    meta = dict(line.split(" = ", 1) for line in
                (out / "metadata.txt").read_text().splitlines())
    assert float(meta["slope_consistency_gap"]) <= 0.6 / 16


def test_foliate_command(tmp_path):
    text = ("command = foliate\nbackend = oracle\nresolution = 96\n"
            "lambda_nodes = 24\nlambdas = 0.2\nc = 0.6\n"
            "anchor_rings = 2\nanchor_angles = 4\n"
            "[potential]\nbuiltin quartic\n")
    cfg = parse_config(text)
    out = tmp_path / "fol"
    assert run(cfg, out) == 0
    areas = np.loadtxt(out / "areas.csv", delimiter=",", comments="#")
    assert abs(areas[2] - areas[1]) < 2e-2   # area vs leaf level
    assert (out / "tubular.csv").exists()


def test_main_exit_codes(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text(BASE)
    assert main(["envelope", "--config", str(cfg_file),
                 "--out", str(tmp_path / "ok")]) == 0
    bad = tmp_path / "bad.cfg"
    bad.write_text("command = envelope\nnope = 1\n[potential]\nbuiltin flat\n")
    assert main(["envelope", "--config", str(bad),
                 "--out", str(tmp_path / "x")]) == 1
    missing = tmp_path / "missing.cfg"
    assert main(["envelope", "--config", str(missing)]) == 1


def test_main_numerical_failure_exit_code(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text(BASE.replace("tol = 1e-9",
                                     "tol = 1e-13\nmax_iters = 4"))
    code = main(["envelope", "--config", str(cfg_file),
                 "--out", str(tmp_path / "fail")])
    assert code == 2
    assert (tmp_path / "fail" / "FAILED").exists()
