import csv
import math

import numpy as np
import pytest

from qtflow import diagnostics as dg
from qtflow.config import ConfigError, build_run, parse_config, random_smooth_field
from qtflow.geometry import build_grid, flat_background
from qtflow.qflow import FlowConfig, run_qflow
from qtflow.snapshot import BOTH_FACES, FACE_HIGH, VOLUME, decode, encode, read_snapshot, write_snapshot

MINIMAL = """[grid]
n1 = 6
n2 = 6
n3 = 6
n4 = 7

[flow]
type = qflow
"""


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def record(step=0, **kw):
    base = dict(step=step, t=0.0, dt=0.0, energy=1.0, volume=1.0, mean_curvature=0.0, ratio=0.0,
                x_t=1.0, kappa=0.0, cg_iters=0, residual=0.0, max_u=0.0, min_u=0.0, ubar_g0=0.0, h2_norm=0.0)
    base.update(kw)
    return dg.DiagnosticsRecord(**base)


# ---------------------------------------------------------------- config

def test_minimal_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL))
    fc = cfg.flow_config
    assert (fc.dt0, fc.cg_tol, fc.x_tol) == (1e-3, 1e-9, 1e-8)
    assert cfg.flow == "qflow" and cfg.background == "flat" and cfg.initial == "zero" and cfg.profile == "one"
    assert cfg.out_dir == tmp_path and cfg.diagnostics == "diagnostics.csv"


def test_unknown_key_suggestion(tmp_path):
    with pytest.raises(ConfigError, match=r"run.ini:9: unknown key 'dt' .*did you mean 'dt0'") as info:
        parse_config(write(tmp_path, MINIMAL + "dt = 0.1\n"))
    assert info.value.line == 9


def test_negative_amplitude_positivity(tmp_path):
    with pytest.raises(ConfigError, match="positive"):
        parse_config(write(tmp_path, MINIMAL + "F = cosine:1,-2\n"))


def test_missing_section(tmp_path):
    with pytest.raises(ConfigError, match=r"missing section \[flow\]"):
        parse_config(write(tmp_path, "[grid]\nn1=4\nn2=4\nn3=4\nn4=5\n"))


def test_unknown_section(tmp_path):
    with pytest.raises(ConfigError, match=r"unknown section \[solvr\].*solver"):
        parse_config(write(tmp_path, MINIMAL + "[solvr]\ncg_tol = 1e-9\n"))


def test_type_mismatch(tmp_path):
    with pytest.raises(ConfigError, match=r":2: .*n1 = 'six' is not a valid int"):
        parse_config(write(tmp_path, MINIMAL.replace("n1 = 6", "n1 = six")))


def test_grid_too_small(tmp_path):
    with pytest.raises(ConfigError, match="n4"):
        parse_config(write(tmp_path, MINIMAL.replace("n4 = 7", "n4 = 3")))


def test_wrong_profile_for_flow(tmp_path):
    with pytest.raises(ConfigError, match="'S' does not apply"):
        parse_config(write(tmp_path, MINIMAL + "S = one\n"))


@pytest.mark.parametrize("bad", ["initial = mode:0.1,1", "initial = wave", "F = cosine:7,0.2", "type = pflow"])
def test_bad_values(tmp_path, bad):
    text = MINIMAL.replace("type = qflow\n", "type = qflow\n" + bad + "\n") if "type" not in bad else MINIMAL.replace("type = qflow", bad)
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, text))


def test_overrides(tmp_path):
    cfg = parse_config(write(tmp_path, MINIMAL), seed=11, grid_override=(4, 4, 4, 5))
    assert cfg.seed == 11 and cfg.grid == (4, 4, 4, 5)


def test_build_run_fields(tmp_path):
    text = MINIMAL + "initial = mode:0.1,1,0,0,1\nF = cosine:1,0.5\n"
    geo, F, u0 = build_run(parse_config(write(tmp_path, text)))
    x1, _, _, x4 = geo.grid.coords()
    assert np.allclose(u0, 0.1 * np.cos(2 * np.pi * x1) * np.cos(np.pi * x4))
    assert np.allclose(F, 1 + 0.5 * np.cos(2 * np.pi * x1) * np.ones(geo.grid.shape))


def test_build_run_tflow_fields(tmp_path):
    text = MINIMAL.replace("qflow", "tflow") + "initial = mode:0.1,1,0,0,0\nS = cosine:2,0.5\n"
    geo, S, v0 = build_run(parse_config(write(tmp_path, text)))
    assert v0.shape == S.shape == geo.grid.face_shape
    f1, f2, _ = geo.grid.face_coords()
    assert np.allclose(v0[0], 0.1 * np.cos(2 * np.pi * f1) * np.ones(geo.grid.face_shape[1:]))
    assert np.allclose(S[1], 1 + 0.5 * np.cos(2 * np.pi * f2) * np.ones(geo.grid.face_shape[1:]))


def test_files_resolved_relative_to_config(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    g = build_grid(6, 6, 6, 7)
    u = random_smooth_field(g, 0.1, 0)
    np.save(sub / "u0.npy", u)
    np.savez(sub / "bg.npz", Q0=np.full(g.shape, 0.2))
    write_snapshot(sub / "F.pfld", 1.5 + u, g)
    text = MINIMAL + "initial = file:u0.npy\nF = file:F.pfld\n[background]\nkind = synthetic:bg.npz\n"
    geo, F, u0 = build_run(parse_config(write(sub, text)))
    assert np.array_equal(u0, u) and np.array_equal(F, 1.5 + u)
    assert geo.kind == "synthetic" and np.all(geo.Q0 == 0.2)


def test_bad_background_file(tmp_path):
    np.savez(tmp_path / "bg.npz", Q0=np.zeros((2, 2)))
    text = MINIMAL + "[background]\nkind = synthetic:bg.npz\n"
    with pytest.raises(ConfigError, match="shape"):
        build_run(parse_config(write(tmp_path, text)))


def test_random_initial_seeded(tmp_path):
    text = MINIMAL + "initial = random:0.1\n"
    p = write(tmp_path, text)
    a = build_run(parse_config(p, seed=5))[2]
    b = build_run(parse_config(p, seed=5))[2]
    c = build_run(parse_config(p, seed=6))[2]
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    assert np.abs(a).max() == pytest.approx(0.1)


# ------------------------------------------------------------ records, sink

def test_record_validation():
    with pytest.raises(ValueError, match="finite"):
        record(energy=math.nan)
    with pytest.raises(ValueError):
        record(x_t=-1.0)
    with pytest.raises(ValueError):
        record(volume=0.0)


def test_sink_header_once_and_flush(tmp_path):
    path = tmp_path / "d.csv"
    with dg.CsvSink(path, "tflow") as sink:
        dg.emit_record(record(0), sink)
        # flushed: visible to an independent reader before close
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == dg.column_names("tflow") and len(rows) == 2
        dg.emit_record(record(1), sink)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert sum(r == dg.column_names("tflow") for r in rows) == 1
    assert len(rows) == 3
    assert {"area", "tbar", "x_T"} <= set(rows[0])


def test_rows_equal_accepted_steps(tmp_path):
    geo = flat_background(build_grid(6, 6, 6, 7))
    u0 = random_smooth_field(geo.grid, 0.05, 1)
    path = tmp_path / "d.csv"
    with dg.CsvSink(path) as sink:
        res = run_qflow(geo, np.ones(geo.grid.shape), FlowConfig(max_steps=4), u0, sink=sink)
    flow, rows = dg.read_diagnostics(path)
    assert flow == "qflow" and len(rows) == res.summary["steps"] + 1 == 5


def test_qflow_columns():
    names = dg.column_names("qflow")
    for col in ("step", "t", "dt", "energy", "volume", "qbar", "x_t", "cg_iters", "residual"):
        assert col in names


# ---------------------------------------------------------------- report

def write_rows(path, rows, flow="qflow"):
    with dg.CsvSink(path, flow) as sink:
        for r in rows:
            sink.emit(r)


def test_report_passes_on_good_run(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [record(0, energy=1.0, x_t=1.0), record(1, energy=0.5, x_t=1e-9)])
    text, code = dg.invariant_report(p)
    assert code == dg.EXIT_OK and "FAIL" not in text


def test_report_flags_energy_increase(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [record(0, energy=1.0), record(1, energy=1.5, x_t=1e-9)])
    text, code = dg.invariant_report(p)
    assert code == dg.EXIT_INVARIANT
    assert "FAIL  energy monotonicity" in text


def test_report_no_data(tmp_path):
    p = tmp_path / "d.csv"
    write_rows(p, [])
    text, code = dg.invariant_report(p)
    assert code == dg.EXIT_NO_DATA and "no data" in text
    assert code not in (dg.EXIT_OK, dg.EXIT_BUDGET, dg.EXIT_DIVERGED, dg.EXIT_CONFIG, dg.EXIT_INVARIANT)


@pytest.mark.parametrize("content", ["", "a,b\n1,2\n", None])
def test_report_malformed(tmp_path, content):
    p = tmp_path / "d.csv"
    if content is None:
        write_rows(p, [record(0)])
        with open(p, "a") as fh:
            fh.write("1,2,3\n")
    else:
        p.write_text(content)
    with pytest.raises(dg.ReportError):
        dg.invariant_report(p)


# -------------------------------------------------------------- snapshots

@pytest.mark.parametrize("face", [VOLUME, BOTH_FACES, FACE_HIGH])
def test_snapshot_round_trip_bytes(tmp_path, face):
    g = build_grid(4, 5, 6, 7)
    shape = {VOLUME: g.shape, BOTH_FACES: g.face_shape, FACE_HIGH: g.face_shape[1:]}[face]
    values = np.random.default_rng(0).normal(size=shape)
    p1, p2 = tmp_path / "a.pfld", tmp_path / "b.pfld"
    write_snapshot(p1, values, g, face)
    back, dims, code = read_snapshot(p1)
    assert dims == g.shape and code == face and np.array_equal(back, values)
    write_snapshot(p2, back, g, code)
    assert p1.read_bytes() == p2.read_bytes()
    assert len(p1.read_bytes()) == 32 + 8 * values.size


def test_snapshot_rejects_corruption():
    g = build_grid(4, 4, 4, 5)
    data = encode(np.zeros(g.shape), g.shape)
    with pytest.raises(ValueError, match="magic"):
        decode(b"XXXX" + data[4:])
    with pytest.raises(ValueError, match="bytes"):
        decode(data[:-8])
    with pytest.raises(ValueError):
        encode(np.zeros((4, 4)), g.shape)
