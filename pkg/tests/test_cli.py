import json
import subprocess
import sys

import numpy as np
import pytest

from browfiber import io
from browfiber.cli import CliError, main, parse_ender
from browfiber.metrics import evaluate
from browfiber.rootfinder import DensityMap
from browfiber.synthgen import SynthConfig, gen_case, write_case


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("case")
    write_case(gen_case(SynthConfig(root_count=10, seed=5)), d)
    return d


def run(argv, capsys):
    code = main([str(a) for a in argv])
    err = capsys.readouterr().err
    return code, err


# synth

def test_synth_and_rerun_byte_identical(tmp_path, capsys):
    for name in ("a", "b"):
        code, err = run(["synth", "--root-count", 5, "--seed", 2, "--out", tmp_path / name], capsys)
        assert code == 0 and "SUMMARY cmd=synth roots=5" in err
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_synth_config_file_and_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"root_count": 4, "seed": 9, "field_style": "swirl"}))
    code, err = run(["synth", "--config", cfg, "--seed", 10, "--out", tmp_path / "o"], capsys)
    assert code == 0 and "seed=10" in err and "field_style=swirl" in err
    written = json.loads((tmp_path / "o" / "config.json").read_text())
    assert written["seed"] == 10 and written["root_count"] == 4


def test_synth_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"root_count": 4, "bogus": 1}))
    assert run(["synth", "--config", cfg, "--out", tmp_path / "o"], capsys)[0] == 2
    cfg.write_text("{oops")
    assert run(["synth", "--config", cfg, "--out", tmp_path / "o"], capsys)[0] == 2
    code, err = run(["synth", "--config", tmp_path / "missing.json", "--out", tmp_path / "o"], capsys)
    assert code == 2 and "missing.json" in err


def test_synth_figures(tmp_path, capsys):
    code, _ = run(["synth", "--root-count", 3, "--out", tmp_path / "c", "--figures", tmp_path / "figs"], capsys)
    assert code == 0 and (tmp_path / "figs" / "density.png").stat().st_size > 0


# extract-roots

def test_extract_roots(case_dir, tmp_path, capsys):
    out = tmp_path / "roots.fib"
    code, err = run(["extract-roots", "--density", case_dir / "density.dmap", "--camera", case_dir / "camera.json",
                     "--mesh", case_dir / "mesh.obj", "--out", out, "--samples", 200000,
                     "--figures", tmp_path / "f"], capsys)
    assert code == 0, err
    assert "RUN extract-roots tau=0.2*max eps=3.0 min_pts=4" in err
    roots = io.read_roots(out)
    assert len(roots) == 10
    assert (tmp_path / "f" / "roots2d.png").exists()


def test_extract_roots_empty_map(case_dir, tmp_path, capsys):
    io.write_dmap(tmp_path / "z.dmap", DensityMap(np.zeros((20, 30), dtype=np.float32)))
    code, err = run(["extract-roots", "--density", tmp_path / "z.dmap", "--camera", case_dir / "camera.json",
                     "--mesh", case_dir / "mesh.obj", "--out", tmp_path / "r.fib"], capsys)
    assert code == 3 and "no clusters above the density threshold" in err
    assert not (tmp_path / "r.fib").exists()


def test_extract_roots_missing_and_bad_inputs(case_dir, tmp_path, capsys):
    code, err = run(["extract-roots", "--density", tmp_path / "nope.dmap", "--camera", case_dir / "camera.json",
                     "--mesh", case_dir / "mesh.obj", "--out", tmp_path / "r.fib"], capsys)
    assert code == 2 and "nope.dmap" in err
    (tmp_path / "bad.dmap").write_bytes(b"DMAX" + b"\0" * 20)
    code, err = run(["extract-roots", "--density", tmp_path / "bad.dmap", "--camera", case_dir / "camera.json",
                     "--mesh", case_dir / "mesh.obj", "--out", tmp_path / "r.fib"], capsys)
    assert code == 2 and "bad.dmap" in err and "byte 0" in err


def test_argparse_rejects_out_of_range(case_dir, tmp_path, capsys):
    with pytest.raises(SystemExit) as ei:
        main(["extract-roots", "--density", "x", "--camera", "y", "--mesh", "z", "--out", "o", "--eps", "-1"])
    assert ei.value.code == 2
    with pytest.raises(SystemExit) as ei:
        main(["grow", "--roots", "r", "--field", "f", "--out", "o", "--theta", "180"])
    assert ei.value.code == 2
    capsys.readouterr()


# grow

def test_grow_defaults_echoed(case_dir, tmp_path, capsys):
    code, err = run(["grow", "--roots", case_dir / "roots.fib", "--field", case_dir / "field.ofld",
                     "--out", tmp_path / "f.fib"], capsys)
    assert code == 0
    head = [ln for ln in err.splitlines() if ln.startswith("RUN grow")][0]
    assert "step=0.014" in head and "theta=30" in head and "max_steps=200" in head and "threads=1" in head
    fs = io.read_fib(tmp_path / "f.fib")
    assert len(fs) == 10 and all(len(f) == 7 for f in fs)


def test_grow_rerun_and_threads_identical(case_dir, tmp_path, capsys):
    outs = []
    for i, threads in enumerate((1, 1, 3)):
        out = tmp_path / f"g{i}.fib"
        code, _ = run(["grow", "--roots", case_dir / "roots.fib", "--field", case_dir / "field.ofld",
                       "--ender", f"table:{case_dir / 'levels.txt'}", "--threads", threads, "--out", out], capsys)
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_grow_table_reproduces_raw_lengths(case_dir, tmp_path, capsys):
    out = tmp_path / "g.fib"
    run(["grow", "--roots", case_dir / "roots.fib", "--field", case_dir / "field.ofld",
         "--ender", f"table:{case_dir / 'levels.txt'}", "--out", out], capsys)
    levels = io.read_levels(case_dir / "levels.txt")
    assert [len(f) - 1 for f in io.read_fib(out)] == levels


def test_grow_policy_errors(case_dir, tmp_path, capsys):
    short = tmp_path / "short.txt"
    io.write_levels(short, [3, 4])
    base = ["grow", "--roots", case_dir / "roots.fib", "--field", case_dir / "field.ofld", "--out", tmp_path / "o"]
    assert run(base + ["--ender", f"table:{short}"], capsys)[0] == 4
    assert run(base + ["--ender", "spiral"], capsys)[0] == 4
    assert run(base + ["--ender", "max-steps:abc"], capsys)[0] == 4
    # the band is an open strip, not a closed hull
    assert run(base + ["--ender", f"mesh:{case_dir / 'mesh.obj'}"], capsys)[0] == 4
    code, err = run(base + ["--ender", f"table:{tmp_path / 'none.txt'}"], capsys)
    assert code == 2 and "none.txt" in err


def test_grow_mesh_ender(case_dir, tmp_path, capsys):
    code, _ = run(["grow", "--roots", case_dir / "roots.fib", "--field", case_dir / "field.ofld",
                   "--ender", f"mesh:{case_dir / 'hull.obj'}", "--out", tmp_path / "m.fib"], capsys)
    assert code == 0


def test_grow_empty_roots(case_dir, tmp_path, capsys):
    (tmp_path / "e.fib").write_text("0\n")
    code, _ = run(["grow", "--roots", tmp_path / "e.fib", "--field", case_dir / "field.ofld",
                   "--out", tmp_path / "o.fib"], capsys)
    assert code == 3


def test_parse_ender_forms():
    assert parse_ender("mean-length").target_len == 0.0714
    assert parse_ender("mean-length:0.1").target_len == 0.1
    assert parse_ender("max-steps:7").n == 7
    with pytest.raises(CliError):
        parse_ender("mesh:")


# evaluate

def test_evaluate_identity_and_figures(case_dir, tmp_path, capsys):
    rep = tmp_path / "out" / "report.json"
    code, err = run(["evaluate", "--pred", case_dir / "fibers.fib", "--gt", case_dir / "fibers.fib",
                     "--report", rep], capsys)
    assert code == 0 and "SUMMARY cmd=evaluate" in err
    js = json.loads(rep.read_text())
    assert js["iou"] == 1.0 and js["fdo"] == 0.0 and js["mle"] == 0.0 and js["dcd_002"] == 0.0
    for name in ("report_fibers.png", "report_length_levels.png", "report_metrics.png"):
        assert (tmp_path / "out" / name).stat().st_size > 0


def test_evaluate_matches_library(case_dir, tmp_path, capsys):
    pred = tmp_path / "p.fib"
    run(["grow", "--roots", case_dir / "roots.fib", "--field", case_dir / "field.ofld", "--out", pred], capsys)
    rep = tmp_path / "r.json"
    code, _ = run(["evaluate", "--pred", pred, "--gt", case_dir / "fibers.fib", "--report", rep, "--no-figures"],
                  capsys)
    assert code == 0
    lib = evaluate(io.read_fib(pred), io.read_fib(case_dir / "fibers.fib")).to_json()
    assert json.loads(rep.read_text()) == json.loads(json.dumps(lib))
    assert not list(tmp_path.glob("*.png"))


def test_evaluate_empty_and_short(case_dir, tmp_path, capsys):
    (tmp_path / "e.fib").write_text("0\n")
    (tmp_path / "one.fib").write_text("1\n1\n0 0 0\n")
    base = ["--gt", case_dir / "fibers.fib", "--report", tmp_path / "r.json", "--no-figures"]
    assert run(["evaluate", "--pred", tmp_path / "e.fib"] + base, capsys)[0] == 5
    assert run(["evaluate", "--pred", tmp_path / "one.fib"] + base, capsys)[0] == 5


# export-obj

def test_export_obj(case_dir, tmp_path, capsys):
    out = tmp_path / "t.obj"
    code, _ = run(["export-obj", "--fibers", case_dir / "fibers.fib", "--out", out, "--sides", 6], capsys)
    assert code == 0
    mesh = io.load_obj(out)
    fs = io.read_fib(case_dir / "fibers.fib")
    assert len(mesh.vertices) == 6 * sum(len(f) for f in fs)


def test_export_obj_nothing_to_export(tmp_path, capsys):
    (tmp_path / "one.fib").write_text("1\n1\n0 0 0\n")
    assert run(["export-obj", "--fibers", tmp_path / "one.fib", "--out", tmp_path / "t.obj"], capsys)[0] == 5


# density-from-roots

def test_density_from_roots_matches_case(case_dir, tmp_path, capsys):
    cfg = json.loads((case_dir / "config.json").read_text())
    out = tmp_path / "d.dmap"
    code, _ = run(["density-from-roots", "--roots", case_dir / "roots.fib", "--camera", case_dir / "camera.json",
                   "--w", cfg["width"], "--h", cfg["height"], "--out", out], capsys)
    assert code == 0
    assert out.read_bytes() == (case_dir / "density.dmap").read_bytes()


def test_density_from_no_roots_is_zero(case_dir, tmp_path, capsys):
    (tmp_path / "e.fib").write_text("0\n")
    out = tmp_path / "d.dmap"
    code, _ = run(["density-from-roots", "--roots", tmp_path / "e.fib", "--camera", case_dir / "camera.json",
                   "--w", 16, "--h", 8, "--out", out], capsys)
    assert code == 0
    assert np.all(io.read_dmap(out).values == 0) and io.read_dmap(out).values.shape == (8, 16)


def test_density_bad_sigma_range(case_dir, tmp_path, capsys):
    code, _ = run(["density-from-roots", "--roots", case_dir / "roots.fib", "--camera", case_dir / "camera.json",
                   "--w", 16, "--h", 8, "--sigma-min", 5, "--sigma-max", 2, "--out", tmp_path / "d.dmap"], capsys)
    assert code == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "browfiber", "synth", "--root-count", "2", "--out", str(tmp_path / "c")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "SUMMARY cmd=synth" in r.stderr
    r = subprocess.run([sys.executable, "-m", "browfiber", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "extract-roots" in r.stdout
