import json

import numpy as np
import pytest

from sfocreg.cli import ConfigError, build_match_config, main, parse_config_file
from sfocreg.descriptor import load_volume
from sfocreg.geometry import AffineTransform
from sfocreg.harness import SynthSpec, make_texture, synth_pair
from sfocreg.pipeline import load_cps
from sfocreg.raster import load_raster, save_raster, save_world_file


@pytest.fixture
def synth_dir(tmp_path):
    """A gamma-mapped pair with a 6-px geo bias, written to disk."""
    base = make_texture(160, 160, seed=20)
    pair = synth_pair(SynthSpec(base=base, tone="gamma", gamma=1.8,
                                seed=21, geo_bias=(6.0, 6.0)))
    d = tmp_path / "pair"
    d.mkdir()
    save_raster(pair.sensed, d / "sensed.fras", "float")
    save_raster(pair.reference, d / "reference.fras", "float")
    save_world_file(pair.sensed_geo, d / "sensed.fras.wld")
    save_world_file(pair.ref_geo, d / "reference.fras.wld")
    return d


SMALL_FLAGS = ["--template-size", "24", "--search-size", "48",
               "--ip-count", "20", "--fast-threshold", "0.06"]


# -- config surface ------------------------------------------------------------

def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("template_size = 64  # comment\n"
                   "sigmas_first = 0.6,0.8\n"
                   "second_order = false\n"
                   "\n"
                   "inlier_threshold = 2.0\n")
    flat = parse_config_file(cfg)
    assert flat == {"template_size": 64, "sigmas_first": (0.6, 0.8),
                    "second_order": False, "inlier_threshold": 2.0}
    config = build_match_config(flat)
    assert config.template_size == 64
    assert config.sfoc.sigmas_first == (0.6, 0.8)
    assert config.sfoc.second_order is False
    assert config.ransac.inlier_threshold == 2.0


def test_config_unknown_key_rejected(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("template_sizes = 64\n")
    with pytest.raises(ConfigError):
        parse_config_file(cfg)


def test_config_defaults_documented():
    config = build_match_config({})
    assert config.template_size == 100
    assert config.search_size == 200
    assert config.ip_count == 400
    assert config.min_score == 0.2
    assert config.correct_threshold == 1.5
    assert config.sfoc.orientations == 6
    assert config.sfoc.sigmas_first == (0.6, 0.8, 1.0)
    assert config.sfoc.sigma_second == (1.5,)
    assert config.sfoc.dilation_rates == (1, 2, 3)
    assert config.ransac.inlier_threshold == 1.5
    assert config.ransac.max_iterations == 2000
    assert config.ransac.confidence == 0.995


def test_flag_overrides_config_file(tmp_path, synth_dir, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("template_size = 99\n")
    out = tmp_path / "vol.sfoc"
    code = main(["describe", str(synth_dir / "sensed.fras"), "--out", str(out),
                 "--config", str(cfg), "--template-size", "24"])
    assert code == 0  # flag wins; describe ignores sizes but must parse them


def test_bad_config_file_exit_code(tmp_path, synth_dir):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nope = 1\n")
    code = main(["describe", str(synth_dir / "sensed.fras"),
                 "--out", str(tmp_path / "v.sfoc"), "--config", str(cfg)])
    assert code == 2


# -- describe --------------------------------------------------------------------

def test_describe_default_depth(tmp_path, synth_dir, capsys):
    out = tmp_path / "vol.sfoc"
    assert main(["describe", str(synth_dir / "sensed.fras"), "--out", str(out)]) == 0
    assert "z=12" in capsys.readouterr().out
    vol = load_volume(out)
    assert vol.z == 12
    # dumped volume reloads bit-identically
    again = load_volume(out)
    assert np.array_equal(vol.data, again.data)


def test_describe_first_order_mode(tmp_path, synth_dir, capsys):
    out = tmp_path / "vol6.sfoc"
    assert main(["describe", str(synth_dir / "sensed.fras"), "--out", str(out),
                 "--fsfoc"]) == 0
    assert "z=6" in capsys.readouterr().out
    assert load_volume(out).z == 6


def test_describe_montage(tmp_path, synth_dir):
    out = tmp_path / "vol.sfoc"
    montage = tmp_path / "channels"
    assert main(["describe", str(synth_dir / "sensed.fras"), "--out", str(out),
                 "--montage-dir", str(montage)]) == 0
    assert len(list(montage.glob("channel_*.pgm"))) == 12


def test_describe_missing_file_exit_code(tmp_path):
    assert main(["describe", str(tmp_path / "ghost.fras"),
                 "--out", str(tmp_path / "v.sfoc")]) == 4


# -- match -----------------------------------------------------------------------

def test_match_recovers_geo_bias(tmp_path, synth_dir):
    out = tmp_path / "cps.csv"
    code = main(["match", str(synth_dir / "sensed.fras"),
                 str(synth_dir / "reference.fras"), "--out", str(out)] + SMALL_FLAGS)
    assert code == 0
    cps = load_cps(out)
    assert len(cps) >= 10
    # truth geometry is the identity: matched offsets recover it exactly
    exact = sum(cp.ref_x == cp.sensed_x and cp.ref_y == cp.sensed_y for cp in cps)
    assert exact >= 0.9 * len(cps)


def test_match_heatmap_dump(tmp_path, synth_dir):
    out = tmp_path / "cps.csv"
    heat = tmp_path / "heat"
    code = main(["match", str(synth_dir / "sensed.fras"),
                 str(synth_dir / "reference.fras"), "--out", str(out),
                 "--heatmap-dir", str(heat), "--heatmap-count", "2"] + SMALL_FLAGS)
    assert code == 0
    files = sorted(heat.glob("heatmap_*.fras"))
    assert len(files) == 2
    hm = load_raster(files[0])
    assert hm.data.min() >= 0.0 and hm.data.max() <= 1.0


def test_match_zero_cps_exit_code(tmp_path):
    # flat images produce no interest points at all
    flat = tmp_path / "flat.fras"
    save_raster(make_texture(64, 64, seed=1, low=0.5, high=0.5 + 1e-9), flat, "float")
    code = main(["match", str(flat), str(flat),
                 "--out", str(tmp_path / "cps.csv")] + SMALL_FLAGS)
    assert code == 3


# -- register --------------------------------------------------------------------

def test_register_end_to_end(tmp_path, synth_dir):
    outdir = tmp_path / "reg"
    code = main(["register", str(synth_dir / "sensed.fras"),
                 str(synth_dir / "reference.fras"), "--out-dir", str(outdir)]
                + SMALL_FLAGS)
    assert code == 0
    assert (outdir / "rectified.fras").exists()
    assert (outdir / "control_points.csv").exists()
    assert (outdir / "checkerboard.pgm").exists()
    metrics = json.loads((outdir / "metrics.json").read_text())
    assert metrics["control_points"] >= 10
    assert metrics["inliers"] >= 4
    assert metrics["mt_seconds"] > 0
    assert metrics["model"]["kind"] == "projective"


def test_register_with_truth_cps(tmp_path, synth_dir):
    truth_csv = tmp_path / "truth.csv"
    rows = ["sensed_x,sensed_y,ref_x,ref_y"]
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.uniform(10, 150, 2)
        rows.append(f"{x},{y},{x},{y}")  # identity truth
    truth_csv.write_text("\n".join(rows) + "\n")
    outdir = tmp_path / "reg"
    code = main(["register", str(synth_dir / "sensed.fras"),
                 str(synth_dir / "reference.fras"), "--out-dir", str(outdir),
                 "--truth-cps", str(truth_csv)] + SMALL_FLAGS)
    assert code == 0
    metrics = json.loads((outdir / "metrics.json").read_text())
    assert metrics["cmr"] >= 0.9
    assert metrics["rmse_px"] <= 1.0


def test_register_rfm_requires_rpc(tmp_path, synth_dir):
    code = main(["register", str(synth_dir / "sensed.fras"),
                 str(synth_dir / "reference.fras"),
                 "--out-dir", str(tmp_path / "reg"), "--model", "rfm_affine"])
    assert code == 2


# -- synth / bench / rpc-project ---------------------------------------------------

def test_synth_deterministic(tmp_path):
    d1, d2 = tmp_path / "a", tmp_path / "b"
    args = ["synth", "--texture-size", "96", "--seed", "5", "--tone", "gamma",
            "--gaussian-var", "0.003", "--translate", "4", "-2"]
    assert main(args + ["--out-dir", str(d1)]) == 0
    assert main(args + ["--out-dir", str(d2)]) == 0
    for name in ("sensed.fras", "reference.fras", "sensed.fras.wld",
                 "reference.fras.wld", "truth.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    truth = json.loads((d1 / "truth.json").read_text())
    assert truth["coefficients"] == [4.0, 1.0, 0.0, -2.0, 0.0, 1.0]


def test_bench_prints_both_ratios(capsys):
    assert main(["bench", "--m", "8", "--n", "8", "--M", "16", "--N", "16",
                 "--z", "2", "--repeats", "1"]) == 0
    out = capsys.readouterr().out
    assert "measured ratio" in out and "predicted ratio" in out


def test_rpc_project_identity(tmp_path, capsys):
    from sfocreg.geometry import save_rpc
    import tests.test_geometry as tg
    rpc_path = tmp_path / "cam.rpc"
    save_rpc(tg.unit_rpc(), rpc_path)
    assert main(["rpc-project", "--rpc", str(rpc_path), "--lat", "0.3",
                 "--lon", "0.1"]) == 0
    out = capsys.readouterr().out
    assert "line: 0.3" in out
    assert main(["rpc-project", "--rpc", str(rpc_path), "--inverse",
                 "--line", "0.25", "--sample", "-0.5"]) == 0
    out = capsys.readouterr().out
    assert "lat:" in out and "lon:" in out
