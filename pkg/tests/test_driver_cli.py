import numpy as np
import pytest

from pmutwave.cli import main
from pmutwave.config import ConfigError, from_dict, load_config, loads
from pmutwave.driver import end_time, simulate
from pmutwave.mesh import FaceTag, Region, read_mesh
from pmutwave.output import read_probe_csv, vertex_values, write_probe_csv, write_vtk_snapshot
from pmutwave.scenarios import build_domain
from pmutwave.sem import build_dofmap

from conftest import box_mesh

SMALL = """\
# tiny transmit run
scenario = tx_single
array.radius = 20e-6
array.pitch = 60e-6
geometry.inner_thickness = 20e-6
geometry.lx = 140e-6
geometry.ly = 140e-6
geometry.lz = 100e-6
numerics.h_in = 10e-6
numerics.h_out = 20e-6
numerics.t_end = 0.04e-6
drive.frequency = 50e6
drive.duration = 0.04e-6
pml.thickness = 20e-6
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


# --- config -------------------------------------------------------------------


def test_minimal_config_defaults():
    cfg = loads("scenario = tx_single\n")
    assert cfg["pml.reflection_coeff"] == 1e-4
    assert cfg["numerics.alpha"] == 10
    assert cfg["numerics.safety"] == 0.5
    assert cfg["numerics.dt"] == "auto"
    assert cfg["pml.thickness"] == pytest.approx(1481 / 25e6)


def test_txrx_defaults_switch_at_burst_end():
    cfg = from_dict({"scenario": "txrx_obstacle"})
    assert cfg["drive.switch_time"] == cfg["drive.duration"] == 0.1e-6


@pytest.mark.parametrize("text, key", [
    ("array.radius = -1e-6", "array.radius"),
    ("numerics.alpha = 0.5", "numerics.alpha"),
    ("pml.reflection_coeff = 1.5", "pml.reflection_coeff"),
    ("scenario = orbit", "scenario"),
    ("numerics.h_out = 1e-6", "numerics.h_out"),
])
def test_invalid_values_name_key(text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        loads(text + "\n")


def test_unknown_duplicate_and_malformed_lines():
    with pytest.raises(ConfigError, match=r"cfg:2: unknown key 'numerics.foo'"):
        loads("scenario = array\nnumerics.foo = 1\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:2: duplicate"):
        loads("numerics.r_in = 2\nnumerics.r_in = 3\n", "cfg")
    with pytest.raises(ConfigError, match=r"cfg:1: expected"):
        loads("just words\n", "cfg")
    with pytest.raises(ConfigError, match="unknown key"):
        from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/file.cfg")


def test_dumps_roundtrip():
    cfg = loads(SMALL + "probes = [(0, 0, -1e-5)]\n")
    again = loads(cfg.dumps())
    assert again.values == cfg.values


# --- scenarios ----------------------------------------------------------------


def test_obstacle_depth_from_burst_duration():
    assert 3 * 1481 * 1e-6 == pytest.approx(4.443e-3)
    assert 3 * 1481 * 0.1e-6 == pytest.approx(444.3e-6)
    cfg = from_dict({"scenario": "txrx_obstacle", "geometry.lx": 240e-6, "geometry.ly": 240e-6,
                     "geometry.obstacle_radius": 90e-6})
    dom = build_domain(cfg)
    # snapped to the 15 um outer grid
    assert dom.obstacle_depth == pytest.approx(450e-6)
    top = dom.obstacle
    assert top is not None
    nm = dom.mesh.faces_with_tag(FaceTag.NEUMANN)
    cen = dom.mesh.face_centroids(nm)
    assert np.any(np.isclose(cen[:, 2], -450e-6))


def test_obstacle_errors():
    with pytest.raises(ConfigError, match=r"geometry\.obstacle_radius"):
        from_dict({"scenario": "txrx_obstacle", "geometry.obstacle_radius": 0.0})
    # smaller than half an outer element: nothing left after snapping
    with pytest.raises(ConfigError, match="degenerate"):
        build_domain(from_dict({"scenario": "txrx_obstacle", "geometry.obstacle_radius": 5e-6}))
    with pytest.raises(ConfigError, match="does not fit"):
        build_domain(from_dict({"scenario": "txrx_obstacle", "geometry.lz": 300e-6,
                                "geometry.obstacle_depth": 290e-6}))


def test_small_domain_regions_and_tags(small_cfg):
    dom = build_domain(load_config(small_cfg))
    m = dom.mesh
    counts = np.bincount(m.region, minlength=4)
    assert all(counts > 0)
    assert len(m.faces_with_tag(FaceTag.PMUT)) > 0
    assert len(m.faces_with_tag(FaceTag.PML_OUTER)) > 0
    top = np.isclose(m.face_centroids()[:, 2], 0.0)
    assert set(m.face_tag[top].tolist()) <= {FaceTag.PMUT, FaceTag.NEUMANN}
    assert m.n_membranes == 1 and len(dom.membranes) == 1
    assert np.all(m.element_centroids()[m.region == Region.INNER][:, 2] > -20e-6)


# --- output -------------------------------------------------------------------


def test_probe_csv_roundtrip(tmp_path, rng):
    t = np.cumsum(rng.uniform(0.1, 1, 50)) * 1e-9
    v = rng.standard_normal(50)
    write_probe_csv(t, v, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().startswith("t,p\n")
    t2, v2 = read_probe_csv(tmp_path / "p.csv")
    assert np.array_equal(t, t2) and np.array_equal(v, v2)
    with pytest.raises(ValueError):
        write_probe_csv(t[::-1], v, tmp_path / "bad.csv")


def test_vtk_snapshot_counts(tmp_path):
    m = box_mesh(3, 2, 1)
    dm = build_dofmap(m, 2)
    vals = vertex_values(m, dm, dm.coords[:, 0])
    assert np.allclose(vals, m.nodes[:, 0])
    write_vtk_snapshot(m, vals, tmp_path / "s.vtk")
    text = (tmp_path / "s.vtk").read_text()
    assert f"CELLS {m.n_elements} {9 * m.n_elements}" in text
    assert f"POINT_DATA {m.n_nodes}" in text and "SCALARS pressure" in text
    with pytest.raises(ValueError):
        write_vtk_snapshot(m, vals[:-1], tmp_path / "x.vtk")


# --- driver -------------------------------------------------------------------


def test_zero_drive_gives_zero_series(small_cfg):
    cfg = load_config(small_cfg).replace(drive__amplitude=0.0)
    sim = simulate(cfg)
    r = sim.result
    assert r.probes.shape == (len(r.times), 2)
    assert not r.probes.any() and not r.state.p.any()


def test_end_time_rules(small_cfg):
    cfg = load_config(small_cfg)
    dom = build_domain(cfg)
    assert end_time(cfg, dom) == 0.04e-6
    cfg = cfg.replace(numerics__t_end=None)
    assert end_time(cfg, dom) == pytest.approx(0.04e-6 + 1.2 * abs(dom.lo[2]) / 1481)


def test_tx_probe_causal(small_cfg):
    # probe 80 um below the membrane centre; the burst has an exponentially flat onset
    cfg = load_config(small_cfg).replace(numerics__t_end=0.1e-6, probes=[(0.0, 0.0, -80e-6)])
    r = simulate(cfg).result
    p = r.probes[:, 0]
    arrival = 80e-6 / 1481
    period = 1 / 50e6
    early = r.times < arrival - period
    assert np.abs(p[early]).max() <= 1e-3 * np.abs(p).max()
    assert np.abs(p).max() > 0


# --- CLI ----------------------------------------------------------------------


def test_cli_run_outputs_and_determinism(small_cfg, tmp_path, capsys):
    outs = []
    for w in (1, 2):
        d = tmp_path / f"w{w}"
        assert main(["run", str(small_cfg), "--workers", str(w), "--out", str(d)]) == 0
        outs.append(d)
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == ["config_resolved.txt", "pressure_final.vtk", "probe_0.csv", "probe_1.csv",
                     "summary.txt", "voltage_0.csv"]
    for name in ("probe_0.csv", "probe_1.csv", "voltage_0.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    t, p = read_probe_csv(outs[0] / "probe_0.csv")
    summary = (outs[0] / "summary.txt").read_text()
    steps = int(summary.split("steps ")[1].split()[0])
    assert len(t) == steps + 1
    assert "lambda_max" in summary and "time_interface" in summary
    assert "steps" in capsys.readouterr().out


def test_cli_mesh(small_cfg, tmp_path, capsys):
    assert main(["mesh", str(small_cfg), "--out", str(tmp_path)]) == 0
    m = read_mesh(tmp_path / "mesh.txt")
    assert m.n_elements == build_domain(load_config(small_cfg)).mesh.n_elements
    assert "elements" in capsys.readouterr().out


def test_cli_match_bench(small_cfg, tmp_path, capsys):
    assert main(["match-bench", str(small_cfg), "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "oracle match yes" in out
    assert (tmp_path / "face_pairs.txt").exists()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("array.radius = -5e-6\n")
    assert main(["run", str(bad)]) == 2
    assert "array.radius" in capsys.readouterr().err
    bad.write_text("numerics.whatever = 1\n")
    assert main(["mesh", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    unstable = tmp_path / "unstable.cfg"
    unstable.write_text(SMALL.replace("numerics.t_end = 0.04e-6", "numerics.t_end = 2e-6")
                        + "numerics.dt = 2e-9\n")
    assert main(["run", str(unstable), "--out", str(tmp_path / "u")]) == 3
    assert "non-finite" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["run"])
