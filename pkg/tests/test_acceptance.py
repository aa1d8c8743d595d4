"""Acceptance suite: every release criterion at its stated tolerance.

Each test prints one PASS line (on failure pytest reports the assert).
Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import math
import time
from statistics import median

import numpy as np
import pytest
from scipy import ndimage

from sfocreg.descriptor import SfocParams, build_sfoc
from sfocreg.filters import convolve2d, g1_basis, g2_basis, steer_g1, steer_g2
from sfocreg.geometry import (AffineTransform, ProjectiveTransform, RansacConfig,
                              RpcModel, affine_bias_fit, ransac, rfm_forward,
                              rfm_inverse)
from sfocreg.harness import SynthSpec, make_texture, noise_sweep, synth_pair
from sfocreg.pipeline import MatchConfig, compute_metrics, detect_cps, save_cps
from sfocreg.similarity import (build_sum_tables, complexity_estimate, fast_ncc,
                                ncc_naive, region_sum)


def ok(line: str) -> None:
    print(f"PASS  {line}")


# -- 1. complexity model -------------------------------------------------------

def test_criterion_01_complexity_model():
    report = complexity_estimate(100, 100, 200, 200, 9)
    assert report.ratio == pytest.approx(0.00965, abs=1e-4)
    ok(f"criterion 1: complexity ratio {report.ratio:.5f} == 0.00965 +- 1e-4")


# -- 2. oracle equivalence -----------------------------------------------------

def test_criterion_02_fast_equals_naive_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(50):
        z = int(rng.integers(1, 13))
        tn = int(rng.integers(2, 33))
        tm = int(rng.integers(2, 33))
        sn = int(rng.integers(tn + 1, 65))
        sm = int(rng.integers(tm + 1, 65))
        template = rng.random((tn, tm, z))
        search = rng.random((sn, sm, z))
        if trial % 4 == 0:  # plant zero-variance windows larger than the template
            y0 = int(rng.integers(0, sn - tn))
            x0 = int(rng.integers(0, sm - tm))
            search[y0:min(y0 + tn + 2, sn), x0:min(x0 + tm + 2, sm), :] = \
                float(rng.random())
        fast = fast_ncc(template, search)
        naive = ncc_naive(template, search)
        assert np.array_equal(fast.valid, naive.valid), "degeneracy flags disagree"
        if trial % 4 == 0:
            assert not fast.valid.all(), "planted flat window was not flagged"
        both = fast.valid
        if both.any():
            worst = max(worst, float(np.max(np.abs(
                fast.scores[both] - naive.scores[both]))))
    assert worst <= 1e-5
    ok(f"criterion 2: 50 randomized pairs, max |fast - naive| = {worst:.2e} <= 1e-5, "
       "flags agree (flat windows included)")


# -- 3. measured speedup -------------------------------------------------------

def test_criterion_03_measured_speedup():
    rng = np.random.default_rng(7)
    template = rng.random((100, 100, 12))
    search = rng.random((200, 200, 12))
    fast_times, naive_times = [], []
    for _ in range(5):
        t0 = time.perf_counter()
        fast_ncc(template, search)
        fast_times.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        ncc_naive(template, search)
        naive_times.append(time.perf_counter() - t0)
    speedup = median(naive_times) / median(fast_times)
    assert speedup >= 10.0
    ok(f"criterion 3: fast vs naive speedup {speedup:.1f}x >= 10x "
       f"(m=n=100, M=N=200, z=12, 5 repeats)")


# -- 4. steering identities ----------------------------------------------------

def band_limited(n=128):
    x, y = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    return (0.5
            + 0.18 * np.sin(2 * np.pi * x / 23.0 + 0.7) * np.cos(2 * np.pi * y / 29.0)
            + 0.12 * np.cos(2 * np.pi * (x + y) / 41.0)
            + 0.08 * np.sin(2 * np.pi * (x - 2 * y) / 37.0))


def rotate_about_center(img, phi_degrees):
    phi = math.radians(phi_degrees)
    c, s = math.cos(phi), math.sin(phi)
    center = (np.array(img.shape, dtype=float) - 1.0) / 2.0
    m = np.array([[c, -s], [s, c]])
    return ndimage.affine_transform(img, m, offset=center - m @ center,
                                    order=3, mode="nearest")


def rel_l2(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_criterion_04_steering_identities():
    img = band_limited()
    n = img.shape[0]
    crop = slice(n // 4, -n // 4)

    b1 = g1_basis(1.0)
    rx = convolve2d(img, b1.kx)
    ry = convolve2d(img, b1.ky)
    lin_err = 0.0
    for theta_deg in (30.0, 75.0):
        theta = math.radians(theta_deg)
        steered = convolve2d(img, steer_g1(b1, theta))
        lin_err = max(lin_err, float(np.max(np.abs(
            steered - (math.cos(theta) * rx + math.sin(theta) * ry)))))
        assert lin_err <= 1e-12
        oracle = rotate_about_center(
            convolve2d(rotate_about_center(img, -theta_deg), b1.kx), theta_deg)
        assert rel_l2(steered[crop, crop], oracle[crop, crop]) <= 0.02

    b2 = g2_basis(1.5)
    for theta_deg in (30.0, 60.0):
        theta = math.radians(theta_deg)
        steered = convolve2d(img, steer_g2(b2, theta))
        oracle = rotate_about_center(
            convolve2d(rotate_about_center(img, -theta_deg), b2.kxx), theta_deg)
        assert rel_l2(steered[crop, crop], oracle[crop, crop]) <= 0.02
    ok(f"criterion 4: steering linearity {lin_err:.1e} <= 1e-12; rotation oracles "
       "within 2% (1st order at 30/75 deg, 2nd order at 30/60 deg)")


# -- 5. integral images --------------------------------------------------------

def test_criterion_05_integral_images():
    rng = np.random.default_rng(5)
    vol = rng.random((64, 64, 3))
    tab_p, tab_q = build_sum_tables(vol)
    plane = vol.sum(axis=2)
    squares = (vol * vol).sum(axis=2)
    worst = 0.0
    for _ in range(200):
        w = int(rng.integers(1, 65))
        h = int(rng.integers(1, 65))
        x = int(rng.integers(0, 65 - w))
        y = int(rng.integers(0, 65 - h))
        want_p = float(plane[y:y + h, x:x + w].sum())
        want_q = float(squares[y:y + h, x:x + w].sum())
        worst = max(worst,
                    abs(region_sum(tab_p, x, y, w, h) - want_p) / want_p,
                    abs(region_sum(tab_q, x, y, w, h) - want_q) / want_q)
    assert worst <= 1e-9

    ones_tab, _ = build_sum_tables(np.ones((64, 64, 1)))
    for y in range(0, 65, 7):
        for x in range(0, 65, 7):
            assert ones_tab.table[y, x] == x * y
    ok(f"criterion 5: 200 random rectangle sums within {worst:.1e} <= 1e-9 relative; "
       "all-ones table equals x*y")


# -- 6. descriptor invariants ---------------------------------------------------

def test_criterion_06_descriptor_invariants():
    rng = np.random.default_rng(6)
    img = rng.integers(40, 216, size=(96, 96)).astype(np.float64) / 256.0

    vol = build_sfoc(img)
    assert vol.z == 12
    assert build_sfoc(img, SfocParams(second_order=False)).z == 6

    dx, dy = 4, 6
    shifted = build_sfoc(img[dy:, dx:])
    margin = 24
    a = vol.data[dy + margin:-margin, dx + margin:-margin, :].astype(np.float64)
    b = shifted.data[margin:-margin, margin:-margin, :].astype(np.float64)
    shift_err = float(np.max(np.abs(a - b)))
    assert shift_err <= 1e-9

    assert np.array_equal(build_sfoc(1.0 - img).data, vol.data)

    gained = build_sfoc(0.5 * img).data.astype(np.float64)
    base = vol.data.astype(np.float64)
    strong = np.linalg.norm(base[:, :, :6], axis=2) > 0.5
    gain_err = float(np.max(np.abs(base[strong] - gained[strong])))
    assert gain_err <= 1e-6
    assert np.all(np.isfinite(vol.data))
    assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0
    ok(f"criterion 6: shift equivariance {shift_err:.1e} <= 1e-9; polarity exact; "
       f"gain invariance {gain_err:.1e} <= 1e-6; z=12 default, z=6 degraded")


# -- 7. planted-transform registration ------------------------------------------

def default_scale_config() -> MatchConfig:
    return MatchConfig(template_size=100, search_size=200, ip_count=200,
                       fast_threshold=0.06, workers=4)


def test_criterion_07_planted_transform_registration():
    config = default_scale_config()
    base = make_texture(640, 640, seed=70)

    # (a) integer translation, no radiometric distortion
    dx, dy = 10, 7
    pair = synth_pair(SynthSpec(base=base,
                                transform=AffineTransform.translation(dx, dy)))
    cps = detect_cps(pair.sensed, pair.reference, config,
                     pair.sensed_geo, pair.ref_geo)
    half = config.template_size // 2
    interior = [cp for cp in cps
                if cp.sensed_x - half >= dx and cp.sensed_y - half >= dy]
    assert len(interior) >= 50
    m_clean = compute_metrics(interior, pair.truth_sensed_to_ref, 0.0,
                              config.correct_threshold)
    assert m_clean.cmr == 1.0
    assert m_clean.rmse == 0.0

    # (b) gamma 2.2 tone + gaussian noise + 10 px geo prediction bias
    pair2 = synth_pair(SynthSpec(base=base, tone="gamma", gamma=2.2,
                                 gaussian_var=0.005, seed=71,
                                 geo_bias=(10.0, 10.0)))
    cps2 = detect_cps(pair2.sensed, pair2.reference, config,
                      pair2.sensed_geo, pair2.ref_geo)
    m_nrd = compute_metrics(cps2, pair2.truth_sensed_to_ref, 0.0,
                            config.correct_threshold)
    assert len(cps2) >= 50
    assert m_nrd.cmr >= 0.9
    assert m_nrd.rmse <= 1.0
    ok(f"criterion 7: translation pair CMR {m_clean.cmr:.2f} == 1, RMSE "
       f"{m_clean.rmse:.2f} == 0 ({len(interior)} interior CPs); gamma+noise+bias "
       f"CMR {m_nrd.cmr:.2f} >= 0.9, RMSE {m_nrd.rmse:.2f} <= 1.0 px "
       f"({len(cps2)} CPs at template 100 / search 200 / 200 IPs)")


# -- 8. noise robustness ordering -------------------------------------------------

def test_criterion_08_noise_sweep_ordering():
    config = MatchConfig(template_size=24, search_size=48, ip_count=25,
                         fast_threshold=0.06, workers=4)
    bases = [make_texture(128, 128, seed=s) for s in (80, 81)]
    results = {}
    for kind, levels in (("speckle", (0.02, 0.04, 0.06, 0.08, 0.1)),
                         ("gaussian", (0.002, 0.004, 0.006, 0.008, 0.01))):
        rows = noise_sweep(bases, methods=("sfoc", "raw"), noise_kind=kind,
                           levels=levels, tone="inversion", config=config, seed=82)
        by = {(r.method, r.variance): r.cmr for r in rows}
        for level in levels:
            sfoc_cmr = by[("sfoc", level)]
            raw_cmr = by[("raw", level)]
            assert sfoc_cmr >= raw_cmr, (kind, level, sfoc_cmr, raw_cmr)
        results[kind] = [(lvl, by[("sfoc", lvl)], by[("raw", lvl)])
                         for lvl in levels]
    summary = "; ".join(
        f"{kind}: sfoc {min(v for _, v, _ in rows):.2f}..{max(v for _, v, _ in rows):.2f} "
        f">= raw {max(v for _, _, v in rows):.2f}"
        for kind, rows in results.items())
    ok(f"criterion 8: inversion-tone sweeps, structural CMR >= raw CMR at every "
       f"level ({summary})")


# -- 9. geometry ------------------------------------------------------------------

def test_criterion_09_geometry():
    rng = np.random.default_rng(90)
    truth = ProjectiveTransform(np.array([[1.04, 0.015, -7.0], [-0.02, 0.97, 6.0],
                                          [4e-5, -6e-5, 1.0]]))
    n_in, n_out = 60, 40
    src = rng.uniform(0, 400, (n_in + n_out, 2))
    tx, ty = truth.apply(src[:, 0], src[:, 1])
    dst = np.column_stack([tx, ty])
    inlier = np.zeros(n_in + n_out, dtype=bool)
    inlier[:n_in] = True
    perm = rng.permutation(n_in + n_out)
    src, dst, inlier = src[perm], dst[perm], inlier[perm]
    dst[~inlier] = rng.uniform(0, 400, (n_out, 2))
    model, mask = ransac(src, dst, "projective", RansacConfig(seed=9))
    recovered = (mask & inlier).sum() / inlier.sum()
    assert recovered >= 0.95
    px, py = model.apply(src[:, 0], src[:, 1])
    err = np.hypot(px - dst[:, 0], py - dst[:, 1])
    max_inlier_err = float(err[mask & inlier].max())
    assert max_inlier_err <= 0.1

    # camera model round trip at the normalized tolerance
    num_l = np.zeros(20)
    num_l[2] = 1.0
    num_l += rng.uniform(-0.01, 0.01, 20)
    num_s = np.zeros(20)
    num_s[1] = 1.0
    num_s += rng.uniform(-0.01, 0.01, 20)
    rpc = RpcModel(line_off=2000.0, samp_off=2000.0, lat_off=45.0, lon_off=7.0,
                   height_off=0.0, line_scale=2000.0, samp_scale=2000.0,
                   lat_scale=1.0, lon_scale=1.0, height_scale=500.0,
                   num_l=num_l, den_l=np.concatenate([[1.0], rng.uniform(-0.005, 0.005, 19)]),
                   num_s=num_s, den_s=np.concatenate([[1.0], rng.uniform(-0.005, 0.005, 19)]))
    worst_trip = 0.0
    for _ in range(10):
        lat = 45.0 + rng.uniform(-0.8, 0.8)
        lon = 7.0 + rng.uniform(-0.8, 0.8)
        line, sample = rfm_forward(rpc, lat, lon, 0.0)
        lat2, lon2 = rfm_inverse(rpc, float(line), float(sample), 0.0)
        l2, s2 = rfm_forward(rpc, lat2, lon2, 0.0)
        worst_trip = max(worst_trip, math.hypot(
            (float(l2) - float(line)) / 2000.0, (float(s2) - float(sample)) / 2000.0))
    assert worst_trip <= 1e-6

    # planted affine bias recovered on clean control points
    ident = RpcModel(line_off=0.0, samp_off=0.0, lat_off=0.0, lon_off=0.0,
                     height_off=0.0, line_scale=2000.0, samp_scale=2000.0,
                     lat_scale=2000.0, lon_scale=2000.0, height_scale=100.0,
                     num_l=np.eye(20)[2], den_l=np.eye(20)[0],
                     num_s=np.eye(20)[1], den_s=np.eye(20)[0])
    a = (3.2, 0.0, 0.0)
    b = (0.0, 1e-4, 0.0)
    lats = rng.uniform(-500, 500, 15)
    lons = rng.uniform(-500, 500, 15)
    proj_l, proj_s = rfm_forward(ident, lats, lons, np.zeros(15))
    m = np.array([[1.0 + a[1], a[2]], [b[1], 1.0 + b[2]]])
    sol = np.linalg.solve(m, np.column_stack([proj_l - a[0], proj_s - b[0]]).T).T
    bias, active = affine_bias_fit(sol[:, 0], sol[:, 1], lats, lons,
                                   np.zeros(15), ident)
    bias_err = max(abs(bias.a0 - 3.2), abs(bias.a1), abs(bias.a2),
                   abs(bias.b0), abs(bias.b1 - 1e-4), abs(bias.b2))
    assert active.all() and bias_err <= 1e-6
    ok(f"criterion 9: RANSAC recovered {recovered:.0%} inliers (reproj "
       f"{max_inlier_err:.3f} <= 0.1 px); camera round trip {worst_trip:.1e} <= 1e-6; "
       f"planted bias recovered within {bias_err:.1e} <= 1e-6")


# -- 10. determinism ---------------------------------------------------------------

def test_criterion_10_worker_determinism(tmp_path):
    base = make_texture(288, 288, seed=100)
    pair = synth_pair(SynthSpec(base=base, tone="gamma", gamma=1.8,
                                gaussian_var=0.003, seed=101, geo_bias=(8.0, -6.0)))
    outputs = {}
    for workers in (1, 4):
        config = MatchConfig(template_size=48, search_size=96, ip_count=60,
                             fast_threshold=0.06, workers=workers)
        cps = detect_cps(pair.sensed, pair.reference, config,
                         pair.sensed_geo, pair.ref_geo)
        path = tmp_path / f"cps_w{workers}.csv"
        save_cps(cps, path)
        metrics = compute_metrics(cps, pair.truth_sensed_to_ref, 0.0,
                                  config.correct_threshold)
        outputs[workers] = (path.read_bytes(), metrics.ncm, metrics.cmr, metrics.rmse)
    assert outputs[1][0] == outputs[4][0], "control point CSVs differ across workers"
    assert outputs[1][1:] == outputs[4][1:]
    ok(f"criterion 10: worker counts 1 and 4 produce byte-identical control points "
       f"and metrics ({outputs[1][1]} correct matches)")
