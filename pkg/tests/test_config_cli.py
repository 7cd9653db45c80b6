from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from blochrte import io
from blochrte.cli import main
from blochrte.config import ConfigError, RunConfig, apply_overrides, load_config

DESK = Path(__file__).resolve().parents[1] / "configs" / "desk_1d.yaml"


def test_desk_config_loads():
    cfg = load_config(DESK)
    assert cfg.lattice.dim == 1 and cfg.potential.kind == "cosine"
    assert cfg.content_hash() == load_config(DESK).content_hash()


def test_unknown_key_is_line_anchored(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("lattice:\n  dim: 1\ngrid:\n  n_q: 8\n  n_bandz: 2\n")
    with pytest.raises(ConfigError, match=r"c\.yaml:5: grid\.n_bandz"):
        load_config(p)


def test_range_validation(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("disorder:\n  strength: -1\n")
    with pytest.raises(ConfigError, match=r":2: disorder\.strength"):
        load_config(p)
    with pytest.raises(ConfigError, match="basis"):
        load_config(None, ["lattice.dim=2"])


def test_overrides_and_hash():
    base = load_config(DESK)
    cfg = load_config(DESK, ["grid.n_q=64", "kernel.eta=0.5", "oracle.strengths=[0.1, 0.2]"])
    assert cfg.grid.n_q == 64 and cfg.kernel.eta == 0.5 and cfg.oracle.strengths == [0.1, 0.2]
    assert cfg.content_hash() != base.content_hash()
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])
    with pytest.raises(ConfigError, match="grid.nq"):
        load_config(DESK, ["grid.nq=3"])


def test_defaults_are_valid():
    RunConfig()


def test_sidecar_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    blocks = [rng.normal(size=(2, 3, 1, 1)) + 1j * rng.normal(size=(2, 3, 1, 1)),
              rng.normal(size=(2, 3, 2, 2)) + 1j * rng.normal(size=(2, 3, 2, 2))]
    p = tmp_path / "f.bin"
    p.write_bytes(io.field_bytes(blocks) + io.field_bytes(blocks))
    snaps = io.read_fields(p, [1, 2], 2, 3)
    assert len(snaps) == 2
    for a, b in zip(snaps[1], blocks):
        assert np.array_equal(a, b)
    # first float is Re of band 0, x 0, q 0; second its Im
    raw = np.fromfile(p, dtype="<f8")
    assert raw[0] == blocks[0][0, 0, 0, 0].real and raw[1] == blocks[0][0, 0, 0, 0].imag


def test_cli_bands_free_parabola(tmp_path):
    out = tmp_path / "bands"
    assert main(["bands", "--config", str(DESK), "--set", "potential.kind=zero", "--set", "grid.n_bands=3",
                 "--set", "grid.n_q=16", "--out", str(out)]) == 0
    header, data = io.read_tsv(out / "bands.tsv")
    q, s, e = data[:, 1], data[:, 2].astype(int), data[:, 3]
    for qq in np.unique(q):
        sel = q == qq
        exact = np.sort(0.5 * (qq + 2 * np.pi * np.arange(-5, 6)) ** 2)[: sel.sum()]
        assert np.allclose(np.sort(e[sel]), exact, atol=1e-12)
    first = (out / "bands.tsv").read_text().splitlines()[0]
    assert first.startswith("# config_hash ")
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["exit_status"] == 0 and "created" in meta


def test_cli_evolve_without_kernel_is_frozen(tmp_path):
    out = tmp_path / "ev"
    assert main(["evolve", "--config", str(DESK), "--set", "kernel.enabled=false", "--out", str(out)]) == 0
    rep = json.loads((out / "evolve_report.json").read_text())
    assert json.dumps(rep["initial"], sort_keys=True) == json.dumps(rep["final"], sort_keys=True)


def test_cli_reports_are_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["kernel", "--config", str(DESK), "--out", str(tmp_path / name), "--seed", "4"]) == 0
    for f in ("gamma.tsv", "kernel_summary.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_cli_evolve_with_space_and_fields(tmp_path):
    out = tmp_path / "sp"
    args = ["evolve", "--config", str(DESK), "--out", str(out), "--set", "grid.n_x=16", "--set", "grid.box_length=20",
            "--set", "grid.n_q=8", "--set", "evolution.t_final=0.5", "--set", "evolution.dt=0.05",
            "--set", "evolution.write_fields=true", "--set", "kernel.enabled=false"]
    assert main(args) == 0
    rep = json.loads((out / "evolve_report.json").read_text())
    assert rep["relative_N_drift"] < 1e-12
    snaps = io.read_fields(out / "fields.bin", rep["fields"]["layout"], 16, 8)
    assert len(snaps) == len(rep["fields"]["snapshot_times"])
    assert (out / "density.tsv").exists()


def test_cli_schema_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(DESK.read_text().replace("strength: 0.05", "strenght: 0.05"))
    assert main(["bands", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "bad.yaml:" in err and "strenght" in err


def test_cli_numerical_failure_exit_code(tmp_path, capsys):
    code = main(["bands", "--config", str(DESK), "--set", "lattice.basis=[[0.0]]", "--out", str(tmp_path / "o")])
    assert code == 3
    assert "singular" in capsys.readouterr().err


def test_cli_validate_desk(tmp_path):
    out = tmp_path / "val"
    assert main(["validate", "--config", str(DESK), "--out", str(out)]) == 0
    rep = json.loads((out / "validate_report.json").read_text())
    assert rep["passed"] and len(rep["checks"]) >= 15
