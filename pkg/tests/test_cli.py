import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nltomo.cli import EXIT_CONFIG, EXIT_OK, EXIT_STAGE, main
from nltomo.stackio import read_points

SMALL_CITY = {"n_buildings": 4, "cols": 2, "size_range": [40, 50], "pitch": [60, 70], "margin": 40}


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.stat().st_mtime_ns for p in root.rglob("*") if p.is_file()}


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    root = tmp_path_factory.mktemp("city")
    (root / "city.json").write_text(json.dumps({"city": SMALL_CITY, "output": "sim", "seed": 3}))
    assert main(["simulate", "--config", str(root / "city.json")]) == EXIT_OK
    return root / "sim"


def test_crlb_prints_table(capsys):
    # SNR 10 dB per acquisition with N = 5
    assert main(["crlb", "--n-snr-db", "16.9897", "20"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "n_snr_db,sigma_s_m,sigma_norm"
    assert len(lines) == 3
    assert float(lines[1].split(",")[1]) == pytest.approx(2.1, abs=0.05)


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0


def test_invalid_config_exit_code(tmp_path):
    (tmp_path / "bad.json").write_text("{broken")
    assert main(["crlb", "--config", str(tmp_path / "bad.json")]) == EXIT_CONFIG
    (tmp_path / "c.json").write_text(json.dumps({"filter": {"patch": 4}}))
    assert main(["pipeline", "--config", str(tmp_path / "c.json"), "--stack", str(tmp_path),
                 "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    assert main(["crlb", "--threads", "0"]) == EXIT_CONFIG


def test_simulate_needs_config(tmp_path):
    assert main(["simulate", "-o", str(tmp_path / "o")]) == EXIT_CONFIG


def test_monte_carlo_deterministic(tmp_path):
    cfg = {"simulation": {"n_acquisitions": [4, 5], "n_snr_db": [20], "estimator": ["svd", "cs"]}, "seed": 5}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    outs = []
    for name in ("a", "b"):
        assert main(["simulate", "--config", str(tmp_path / "c.json"), "-o", str(tmp_path / name),
                     "--realizations", "20", "--draws", "2"]) == EXIT_OK
        outs.append((tmp_path / name / "monte_carlo.csv").read_bytes())
    assert outs[0] == outs[1]
    assert len(outs[0].decode().strip().splitlines()) == 1 + 4
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"] and ma["files"] == mb["files"] and ma["seed"] == 5


def test_city_outputs(city):
    meta = json.loads((city / "stack" / "meta.json").read_text())
    assert meta["n"] == 5 and "geometry" in meta and "frame" in meta
    assert len(json.loads((city / "footprints.json").read_text())) == 4
    assert "stack/meta.json" in json.loads((city / "manifest.json").read_text())["files"]


def test_pipeline_end_to_end_and_confinement(city, tmp_path):
    before = tree(city.parent)
    out = tmp_path / "run"
    args = ["pipeline", "--stack", str(city / "stack"), "-o", str(out), "--skip-filter", "--estimator", "svd",
            "--layers", "primary", "--footprints", str(city / "footprints.json"), "--save-intermediate"]
    assert main(args) == EXIT_OK
    assert tree(city.parent) == before
    for name in ("points.csv", "k_hat.int8", "reports.csv", "summary.json", "manifest.json",
                 "filtered/meta.json", "scatterers/meta.json", "fused.bin"):
        assert (out / name).is_file(), name
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_structures"] == 4
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and "points.csv" in man["files"]
    cloud = read_points(out / "points.csv")
    assert len(cloud) > 0
    text = (out / "points.csv").read_text().splitlines()[1].split(",")
    assert all(len(v.replace("-", "").replace(".", "").split("e")[0].lstrip("0")) <= 6 for v in text[:4])


def test_stage_commands_chain(city, tmp_path):
    f, i, u, c = (tmp_path / n for n in ("f", "i", "u", "c"))
    assert main(["filter", "--stack", str(city / "stack"), "-o", str(f), "--search", "11", "--patch", "5",
                 "--bandwidth", "5.0"]) == EXIT_OK
    assert main(["invert", "--input", str(f), "-o", str(i), "--estimator", "svd"]) == EXIT_OK
    assert main(["fuse", "--input", str(i), "-o", str(u), "--layers", "primary"]) == EXIT_OK
    assert main(["compare", "--points", str(u / "points.csv"), "--footprints", str(city / "footprints.json"),
                 "-o", str(c), "--truncate", "10"]) == EXIT_OK
    assert json.loads((c / "summary.json").read_text())["truncation_m"] == 10.0
    assert (c / "reports.csv").read_text().startswith("id,top_min")


def test_wrong_input_kind_is_stage_failure(city, tmp_path):
    assert main(["invert", "--input", str(city / "stack"), "-o", str(tmp_path / "x")]) == EXIT_STAGE


def test_corrupt_stack_fails_cleanly(city, tmp_path):
    import shutil
    bad = tmp_path / "stack"
    shutil.copytree(city / "stack", bad)
    p = bad / "g1_re_2.bin"
    p.write_bytes(p.read_bytes()[:-8])
    out = tmp_path / "run"
    assert main(["pipeline", "--stack", str(bad), "-o", str(out)]) == EXIT_STAGE
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "failed" and man["error"]["stage"] == "load"
    assert not (out / "points.csv").exists()


def test_noiseless_skip_filter_matches_filtered(tmp_path):
    from nltomo.geometry import MUNICH_GEOMETRY
    from nltomo.nlfilter import InterferometricStack
    from nltomo.stackio import read_plane, write_stack
    rng = np.random.default_rng(0)
    shape = (40, 80)
    s_true = np.where(np.arange(80)[None, :] < 40, 0.0, 20.0) * np.ones((40, 1))
    sp = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    k = MUNICH_GEOMETRY.wavenumbers
    st = InterferometricStack(np.array([sp for _ in k]), np.array([sp * np.exp(-1j * kn * s_true) for kn in k]))
    write_stack(st, tmp_path / "stack", MUNICH_GEOMETRY.to_dict(), {"frame": {"anchor": [0, 0, 0]}})
    planes = {}
    for name, extra in (("filtered", []), ("raw", ["--skip-filter"])):
        assert main(["pipeline", "--stack", str(tmp_path / "stack"), "-o", str(tmp_path / name),
                     "--estimator", "svd", "--save-intermediate"] + extra) == EXIT_OK
        planes[name] = read_plane(tmp_path / name / "fused.bin", shape + (2,))[..., 1]
    a, b = planes["filtered"], planes["raw"]
    # search and patch half-widths plus the fusion radius
    away = np.abs(np.arange(80) - 39.5) > 10 + 3 + 3
    both = np.isfinite(a) & np.isfinite(b) & away[None, :]
    assert both.sum() > 300
    dh = np.abs(a[both] - b[both]) * np.sin(MUNICH_GEOMETRY.incidence_angle)
    assert dh.max() <= 0.1


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "nltomo.cli", "crlb", "--n-snr-db", "10"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and r.stdout.startswith("n_snr_db")
