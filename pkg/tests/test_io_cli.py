import csv
import io
import json
import warnings

import numpy as np
import pytest

from wjko.cli import main
from wjko.config import ConfigError, ConfigFileError, ConfigWarning, load_config, parse_config
from wjko.domain import make_grid_domain
from wjko.io import (FrameError, FrameMeta, frame_meta_for, frame_to_pgm, frames_to_ppm, read_frame, read_pgm,
                     write_frame, write_pgm)
from wjko.scenarios import build_scenario, run_scenario


def congestion_config(**over):
    cfg = {
        "scenario": "congestion_crowd",
        "domain": {"width": 50, "height": 50},
        "kernel": {"type": "gaussian", "gamma": 4.0},
        "flow": {"tau": 4.0, "steps": 3},
        "functional": {"kappa_ratio": 1.0, "potential": {"linear": [0.05, 0.0]}},
        "initial": {"disk": {"center": [15, 25], "radius": 8}},
    }
    for key, val in over.items():
        if key in ("domain", "kernel", "flow") and isinstance(val, dict):
            cfg[key] = {**cfg[key], **val}
        else:
            cfg[key] = val
    return cfg


def write_json(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


# ---------------------------------------------------------------- frames

def test_frame_roundtrip_is_exact():
    p = np.random.default_rng(0).random(64)
    p /= p.sum()
    meta = FrameMeta("grid", 8, 8, 64)
    buf = io.BytesIO()
    write_frame(p, meta, buf)
    q, m = read_frame(buf.getvalue())
    assert m == meta
    assert q.tobytes() == p.tobytes()


def test_frame_header_layout(tmp_path):
    path = tmp_path / "f.dat"
    write_frame(np.array([0.25, 0.75]), FrameMeta("mesh", 2, 0, 2), path)
    blob = path.read_bytes()
    assert blob[:4] == b"WJKO"
    assert int.from_bytes(blob[4:6], "little") == 1
    assert blob[6] == 1
    assert len(blob) == 4 + 2 + 1 + 12 + 16
    assert np.frombuffer(blob[-16:], "<f8").tolist() == [0.25, 0.75]
    assert not (tmp_path / "f.dat.part").exists()


def test_frame_errors():
    buf = io.BytesIO()
    write_frame(np.ones(4), FrameMeta("grid", 2, 2, 4), buf)
    blob = buf.getvalue()
    with pytest.raises(FrameError, match="magic"):
        read_frame(b"XJKO" + blob[4:])
    with pytest.raises(FrameError, match="version"):
        read_frame(blob[:4] + (7).to_bytes(2, "little") + blob[6:])
    with pytest.raises(FrameError, match="payload"):
        read_frame(blob[:-3])
    with pytest.raises(FrameError, match="header"):
        read_frame(blob[:10])
    with pytest.raises(FrameError, match="finite"):
        write_frame(np.array([np.nan]), FrameMeta("mesh", 1, 0, 1), io.BytesIO())
    with pytest.raises(FrameError, match="entries"):
        write_frame(np.ones(3), FrameMeta("grid", 2, 2, 4), io.BytesIO())


def test_pgm_preview_contract(tmp_path):
    p = np.array([0.0, 0.1, 0.2, 0.4, 0.3, 0.399])
    frame_to_pgm(p, FrameMeta("grid", 3, 2, 6), tmp_path / "a.pgm")
    img, maxval = read_pgm(tmp_path / "a.pgm")
    assert maxval == 255 and img.shape == (2, 3)
    assert img.ravel().tolist() == [int(np.floor(255 * v / 0.4)) for v in p]


def test_pgm_preview_masked_grid(tmp_path):
    mask = np.array([[True, False], [True, True]])
    meta = frame_meta_for(make_grid_domain(2, 2, mask=mask))
    with pytest.raises(FrameError, match="mask"):
        frame_to_pgm(np.ones(3), meta, tmp_path / "m.pgm")
    frame_to_pgm(np.array([1.0, 0.5, 0.25]), meta, tmp_path / "m.pgm", mask)
    img, _ = read_pgm(tmp_path / "m.pgm")
    assert img.tolist() == [[255, 0], [127, 63]]


def test_ppm_two_density_contract(tmp_path):
    p1, p2 = np.array([0.2, 0.0, 0.1, 0.0]), np.array([0.0, 0.4, 0.1, 0.0])
    frames_to_ppm(p1, p2, FrameMeta("grid", 2, 2, 4), tmp_path / "c.ppm")
    blob = (tmp_path / "c.ppm").read_bytes()
    assert blob.startswith(b"P6\n2 2\n255\n")
    rgb = np.frombuffer(blob[len(b"P6\n2 2\n255\n"):], np.uint8).reshape(2, 2, 3)
    assert rgb[0, 0].tolist() == [127, 0, 0]
    assert rgb[0, 1].tolist() == [0, 255, 0]
    assert rgb[1, 0].tolist() == [63, 63, 0]
    assert rgb[1, 1].tolist() == [0, 0, 0]


def test_read_pgm_16bit_and_comments(tmp_path):
    path = tmp_path / "w.pgm"
    path.write_bytes(b"P5\n# comment\n2 1\n65535\n" + np.array([0, 65535], ">u2").tobytes())
    img, maxval = read_pgm(path)
    assert maxval == 65535 and img.tolist() == [[0, 65535]]
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(FrameError, match="P5"):
        read_pgm(tmp_path / "bad.pgm")


# ---------------------------------------------------------------- config

def test_minimal_config_defaults():
    cfg = parse_config(json.dumps({
        "scenario": "congestion_crowd",
        "domain": {"width": 50, "height": 50},
        "kernel": {"gamma": 1.0},
        "flow": {"tau": 1.0, "steps": 10},
        "functional": {"kappa": 0.001},
        "initial": 1.0,
    }))
    assert cfg.kernel.type == "heat" and cfg.kernel.L == 10 and cfg.kernel.tol == 1e-10
    assert cfg.flow.eps == 1e-8 and cfg.flow.max_inner == 10000
    assert cfg.domain.spacing == 1.0 and cfg.seed == 0


@pytest.mark.parametrize("patch,path", [
    ({"flow": {"tau": -1.0}}, "$.flow.tau"),
    ({"flow": {"steps": 1.5}}, "$.flow.steps"),
    ({"kernel": {"gamma": "big"}}, "$.kernel.gamma"),
    ({"kernel": {"tol": 1e-3}}, "$.kernel.tol"),
    ({"domain": {"width": 0}}, "$.domain.width"),
    ({"scenario": "teleport"}, "$.scenario"),
    ({"functional": {"kappa": 1.0, "kappa_ratio": 2.0}}, "$.functional"),
    ({"functional": {"potential": 0.0}}, "$.functional.kappa"),
    ({"flow": {"tau": 1.0, "steps": 1, "speed": 3}}, "$.flow.speed"),
    ({"initial": {"bumps": [{"center": [1, 2]}]}}, "$.initial[0].bumps[0].sigma"),
    ({"kernel": {"gamma": [1.0, 2.0]}}, "$.kernel.gamma"),
])
def test_config_errors_carry_json_path(patch, path):
    cfg = congestion_config(**patch)
    with pytest.raises(ConfigError) as err:
        parse_config(cfg)
    assert err.value.json_path == path
    assert str(err.value).startswith(path)


def test_gaussian_with_mask_is_cross_field_error(tmp_path):
    write_pgm(tmp_path / "mask.pgm", np.full((50, 50), 255))
    cfg = congestion_config(domain={"mask": "mask.pgm"})
    with pytest.raises(ConfigError, match=r"mask.*heat kernel"):
        parse_config(cfg, tmp_path)


def test_missing_file_is_reported(tmp_path):
    cfg = congestion_config(domain={"mask": "nope.pgm"}, kernel={"type": "heat"})
    with pytest.raises(ConfigFileError) as err:
        parse_config(cfg, tmp_path)
    assert err.value.file.endswith("nope.pgm") and err.value.json_path == "$.domain.mask"


def test_two_density_scenarios_need_two_initial_fields():
    cfg = congestion_config(scenario="sum_coupling", functional={})
    with pytest.raises(ConfigError, match="needs 2"):
        parse_config(cfg)


@pytest.mark.parametrize("ratio", [1, 2, 4])
def test_kappa_ratio_sweep(ratio):
    cfg = congestion_config(flow={"steps": 0})
    cfg["functional"]["kappa_ratio"] = ratio
    sc = build_scenario(parse_config(cfg))
    assert sc.kappa == pytest.approx(ratio * sc.initial[0].max(), rel=1e-15)


@pytest.mark.parametrize("ratio,warns", [(2, False), (10, False), (30, True)])
def test_anisotropy_ratio_warning(ratio, warns):
    cfg = congestion_config(kernel={"type": "heat", "anisotropy": {"circular": ratio}})
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        parse_config(cfg)
    hits = [w for w in rec if issubclass(w.category, ConfigWarning)]
    assert bool(hits) == warns
    if warns:
        assert "30" in str(hits[0].message)


def test_load_config_resolves_relative_paths(tmp_path):
    sub = tmp_path / "cfgs"
    sub.mkdir()
    write_pgm(sub / "mask.pgm", np.full((50, 50), 255))
    path = write_json(sub, congestion_config(domain={"mask": "mask.pgm"}, kernel={"type": "heat"}))
    assert load_config(path).domain.mask == sub / "mask.pgm"
    with pytest.raises(ConfigFileError):
        load_config(tmp_path / "absent.json")


# ---------------------------------------------------------------- run / cli

def test_run_steps_zero_writes_one_frame(tmp_path, capsys):
    cfg = write_json(tmp_path, congestion_config(flow={"steps": 0}))
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.dat")) == ["p-0000.dat"]
    assert (out / "MANIFEST").read_text() == "# status: complete\np-0000.dat\n"
    assert "wrote 1 frames" in capsys.readouterr().out


def test_run_writes_diagnostics_per_step(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(write_json(tmp_path, congestion_config())), "--out", str(out)]) == 0
    with open(out / "diagnostics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert [int(r["step"]) for r in rows] == [1, 2, 3]
    for r in rows:
        assert abs(float(r["mass"]) - 1.0) <= 1e-8
        assert float(r["final_violation"]) <= 1e-8
    frames = [read_frame(out / f"p-{t:04d}.dat")[0] for t in range(4)]
    kappa = frames[0].max()
    assert all(f.max() <= kappa * (1 + 1e-8) for f in frames)


def test_run_is_deterministic(tmp_path):
    cfg = congestion_config(initial={"random": {"low": 0.5, "high": 1.0}}, flow={"steps": 2})
    path = write_json(tmp_path, cfg)
    for d in ("a", "b"):
        assert main(["run", str(path), "--out", str(tmp_path / d)]) == 0
    for f in sorted((tmp_path / "a").glob("*.dat")):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_missing_mask_exits_2_naming_path(tmp_path, capsys):
    cfg = write_json(tmp_path, congestion_config(domain={"mask": "walls.pgm"}, kernel={"type": "heat"}))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "walls.pgm" in err and "not found" in err


def test_bad_config_exits_2(tmp_path, capsys):
    cfg = write_json(tmp_path, congestion_config(flow={"tau": 0}))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "$.flow.tau" in capsys.readouterr().err


def test_failed_run_leaves_manifest(tmp_path, capsys):
    cfg = write_json(tmp_path, congestion_config(flow={"steps": 3, "max_inner": 2, "eps": 1e-14}))
    out = tmp_path / "o"
    assert main(["run", str(cfg), "--out", str(out)]) == 1
    assert (out / "MANIFEST").read_text() == "# status: failed\np-0000.dat\n"
    assert "step 1" in capsys.readouterr().err


def test_masked_run_and_render(tmp_path):
    mask = np.full((20, 20), 255, np.uint8)
    mask[8:12, 5:15] = 0
    write_pgm(tmp_path / "walls.pgm", mask)
    cfg = congestion_config(domain={"width": 20, "height": 20, "mask": "walls.pgm"},
                            kernel={"type": "heat", "gamma": 1.0}, flow={"tau": 1.0, "steps": 1},
                            initial={"disk": {"center": [5, 5], "radius": 3}})
    out = tmp_path / "out"
    assert main(["run", str(write_json(tmp_path, cfg)), "--out", str(out)]) == 0
    assert (out / "mask.pgm").is_file()
    assert main(["render", str(out / "p-0001.dat"), "--pgm", str(tmp_path / "v.pgm")]) == 0
    img, _ = read_pgm(tmp_path / "v.pgm")
    assert img.shape == (20, 20) and img.max() == 255 and np.all(img[8:12, 5:15] == 0)


def test_render_two_density_run(tmp_path):
    cfg = {
        "scenario": "sum_coupling",
        "domain": {"width": 12, "height": 12},
        "kernel": {"type": "gaussian", "gamma": 1.0},
        "flow": {"tau": 1.0, "steps": 1},
        "functional": {"coupling": "congestion", "kappa_ratio": 1.0},
        "initial": [{"disk": {"center": [3, 6], "radius": 2}}, {"disk": {"center": [8, 6], "radius": 2}}],
    }
    out = tmp_path / "out"
    assert main(["run", str(write_json(tmp_path, cfg)), "--out", str(out)]) == 0
    with open(out / "diagnostics.csv") as fh:
        header = next(csv.reader(fh))
    assert header[-2:] == ["mass_p2", "max_density_p2"]
    ppm = tmp_path / "mix.ppm"
    assert main(["render", str(out / "p1-0001.dat"), "--second", str(out / "p2-0001.dat"), "--ppm", str(ppm)]) == 0
    assert ppm.read_bytes().startswith(b"P6\n12 12\n255\n")


def test_render_missing_frame(tmp_path, capsys):
    assert main(["render", str(tmp_path / "x.dat"), "--pgm", str(tmp_path / "x.pgm")]) == 2
    assert "x.dat" in capsys.readouterr().err


def test_oracle_command(capsys):
    assert main(["oracle", "--case", "jko", "--n", "4", "--seed", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    p = np.array(out["p"])
    assert out["kappa"] == 0.6 and p.shape == (4,)
    assert abs(p.sum() - 1) <= 1e-10 and p.max() <= 0.6 * (1 + 1e-10)
    assert out["dual_grad"] <= 1e-10


@pytest.mark.parametrize("case", ["entropy", "blur", "dykstra", "attraction"])
def test_oracle_cases(case, capsys):
    assert main(["oracle", "--case", case, "--n", "3", "--seed", "2", "--iterations", "50"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(sum(out["p"]) - 1) <= 1e-8


def test_oracle_rejects_bad_n(capsys):
    assert main(["oracle", "--case", "jko", "--n", "0"]) == 2


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "wjko", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "oracle" in res.stdout


def test_run_scenario_api(tmp_path):
    sc = build_scenario(parse_config(congestion_config(flow={"steps": 1})))
    summary = run_scenario(sc, tmp_path)
    assert summary.frames == ["p-0000.dat", "p-0001.dat"]


SMALL = {"domain": {"width": 10, "height": 8}, "kernel": {"type": "gaussian", "gamma": 1.0},
         "flow": {"tau": 1.0, "steps": 2}}
DISK = {"disk": {"center": [3, 4], "radius": 2}}
KINDS = {
    "congestion_crowd": {"functional": {"kappa_ratio": 1.0}, "initial": DISK},
    "nonlinear_diffusion": {"functional": {"m": 1.5, "b": 0.5}, "initial": DISK},
    "binary_crowd": {"kernel": {"type": "gaussian", "gamma": 2.0}, "flow": {"tau": 2.0, "steps": 2},
                     "functional": {"kappa_ratio": 1.0, "potential": {"linear": [-1.0, 0.0]}}, "initial": DISK},
    "wasserstein_attraction": {"functional": {"target": {"disk": {"center": [7, 4], "radius": 2}}},
                               "initial": DISK},
    "pairwise_attraction": {"functional": {"alpha": 1.0}, "initial": [DISK, {"constant": 1.0}]},
    "sum_coupling": {"functional": {"coupling": "entropy"}, "initial": [DISK, {"constant": 1.0}]},
}


@pytest.mark.parametrize("kind", sorted(KINDS))
def test_every_scenario_kind_runs(kind, tmp_path):
    cfg = {"scenario": kind, **SMALL, **KINDS[kind]}
    out = tmp_path / "out"
    assert main(["run", str(write_json(tmp_path, cfg)), "--out", str(out)]) == 0
    ids = ["p"] if kind not in ("pairwise_attraction", "sum_coupling") else ["p1", "p2"]
    for i in ids:
        for t in range(3):
            p, meta = read_frame(out / f"{i}-{t:04d}.dat")
            assert meta.n == 80 and abs(p.sum() - 1) <= 1e-7
    with open(out / "diagnostics.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2
