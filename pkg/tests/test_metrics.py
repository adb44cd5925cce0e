"""Fidelity metric oracles, distortion-map ordering, report round trips."""

import numpy as np
import pytest

from platesr.metrics import (
    MetricsReport,
    aggregate_metrics,
    contrast_metric,
    distortion_maps,
    fidelity_record,
    format_median_std,
    lpips,
    luma,
    psnr,
    ssim,
    write_map_png,
)


def oracle_psnr(a, b):
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    acc = 0.0
    n = 0
    for value in diff.ravel():
        acc += value * value
        n += 1
    return 10.0 * np.log10(1.0 / (acc / n))


def oracle_ssim_gray(x, y):
    """Direct windowed SSIM formula, valid positions only."""
    size, sigma = 11, 1.5
    coords = np.arange(size) - 5.0
    g = np.exp(-(coords**2) / (2 * sigma**2))
    win = np.outer(g, g)
    win /= win.sum()
    h, w = x.shape
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(h - size + 1):
        for j in range(w - size + 1):
            px = x[i : i + size, j : j + size]
            py = y[i : i + size, j : j + size]
            mx, my = np.sum(win * px), np.sum(win * py)
            vx = np.sum(win * px * px) - mx**2
            vy = np.sum(win * py * py) - my**2
            cxy = np.sum(win * px * py) - mx * my
            vals.append(
                ((2 * mx * my + c1) * (2 * cxy + c2))
                / ((mx**2 + my**2 + c1) * (vx + vy + c2))
            )
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_images_capped_at_99(self):
        a = np.random.default_rng(0).random((3, 16, 16))
        assert psnr(a, a.copy()) == 99.0

    def test_uniform_offset_point_one_is_exactly_20db(self):
        a = np.full((3, 8, 8), 0.4)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)

    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            a, b = rng.random((3, 10, 10)), rng.random((3, 10, 10))
            assert psnr(a, b) == pytest.approx(oracle_psnr(a, b), abs=1e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        a, b = rng.random((3, 12, 12)), rng.random((3, 12, 12))
        assert psnr(a, b) == psnr(b, a)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_strictly_decreasing_with_noise_amplitude(self):
        rng = np.random.default_rng(3)
        a = rng.random((3, 16, 16)) * 0.5 + 0.25
        noise = rng.standard_normal(a.shape)
        values = [psnr(a, np.clip(a + amp * noise, 0, 1)) for amp in (0.01, 0.05, 0.1)]
        assert values[0] > values[1] > values[2]

    def test_luma_of_gray_pair_equals_rgb_psnr(self):
        rng = np.random.default_rng(4)
        g1, g2 = rng.random((16, 16)), rng.random((16, 16))
        a = np.stack([g1, g1, g1])
        b = np.stack([g2, g2, g2])
        assert abs(psnr(a, b, luma_only=True) - psnr(a, b)) < 1e-9

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 8, 8)), np.zeros((3, 4, 4)))

    def test_luma_coefficients(self):
        img = np.zeros((3, 2, 2))
        img[0] = 1.0
        assert luma(img)[0, 0] == pytest.approx(0.299)


class TestSsim:
    def test_identical_images_give_one(self):
        a = np.random.default_rng(0).random((3, 16, 16))
        assert ssim(a, a.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_nonconstant_image_below_one(self):
        a = np.random.default_rng(1).random((16, 16))
        assert ssim(a, 1.0 - a) < 1.0

    def test_matches_direct_formula_oracle_on_16x16(self):
        rng = np.random.default_rng(2)
        x, y = rng.random((16, 16)), rng.random((16, 16))
        assert ssim(x, y) == pytest.approx(oracle_ssim_gray(x, y), abs=1e-6)

    def test_range_on_random_pairs(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            a, b = rng.random((12, 12)), rng.random((12, 12))
            value = ssim(a, b)
            assert -1.0 <= value <= 1.0

    def test_small_image_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_luma_mode(self):
        rng = np.random.default_rng(4)
        a, b = rng.random((3, 16, 16)), rng.random((3, 16, 16))
        assert ssim(a, b, luma_only=True) == pytest.approx(
            oracle_ssim_gray(luma(a), luma(b)), abs=1e-6
        )


class TestLpips:
    def test_stub_adapter_plumbs_through(self):
        stub = lambda a, b: float(np.mean(np.abs(a - b)))
        a, b = np.zeros((3, 8, 8)), np.full((3, 8, 8), 0.25)
        assert lpips(a, b, stub) == pytest.approx(0.25)
        assert lpips(a, a, stub) == 0.0

    def test_missing_adapter_rejected(self):
        with pytest.raises(ValueError, match="adapter"):
            lpips(np.zeros((3, 8, 8)), np.zeros((3, 8, 8)), None)

    def test_report_marks_unavailable_with_reason(self):
        rng = np.random.default_rng(0)
        recs = [fidelity_record("x", rng.random((3, 16, 16)), rng.random((3, 16, 16)))]
        report = MetricsReport.from_per_image(recs, unavailable={"lpips": "adapter unavailable"})
        assert recs[0]["lpips"] is None
        assert "lpips" not in report.aggregate
        assert report.unavailable["lpips"] == "adapter unavailable"


class TestDistortionMaps:
    def test_constant_image_has_zero_noise(self):
        maps = distortion_maps(np.full((3, 32, 32), 0.6))
        assert np.max(maps.noise_map) < 1e-12
        assert maps.noise_map.shape == (32, 32)

    def test_blur_map_orders_blurred_above_sharp(self):
        from scipy import ndimage

        rng = np.random.default_rng(0)
        chart = np.kron(rng.integers(0, 2, (8, 8)).astype(float), np.ones((6, 6)))
        blurred = ndimage.gaussian_filter(chart, sigma=2.0)
        sharp_maps = distortion_maps(np.stack([chart] * 3))
        blur_maps = distortion_maps(np.stack([blurred] * 3))
        assert blur_maps.blur_map.mean() > sharp_maps.blur_map.mean()

    def test_compression_map_orders_blocky_above_original(self):
        rng = np.random.default_rng(1)
        smooth = np.outer(np.linspace(0, 1, 48), np.linspace(0.2, 0.9, 48))
        smooth += 0.02 * rng.standard_normal(smooth.shape)
        blocky = smooth.copy()
        for i in range(0, 48, 8):
            for j in range(0, 48, 8):
                blocky[i : i + 8, j : j + 8] = smooth[i : i + 8, j : j + 8].mean()
        orig = distortion_maps(np.stack([smooth] * 3))
        quant = distortion_maps(np.stack([blocky] * 3))
        assert quant.compression_map.mean() > orig.compression_map.mean()

    def test_maps_nonnegative_and_full_size(self):
        img = np.random.default_rng(2).random((3, 30, 41))
        maps = distortion_maps(img)
        for arr in (maps.noise_map, maps.blur_map, maps.compression_map):
            assert arr.shape == (30, 41)
            assert np.all(arr >= 0)

    def test_write_16bit_png(self, tmp_path):
        from PIL import Image

        arr = np.random.default_rng(3).random((20, 20))
        write_map_png(arr, tmp_path / "m.png")
        with Image.open(tmp_path / "m.png") as im:
            assert im.mode.startswith("I")
            back = np.asarray(im)
        assert back.dtype in (np.uint16, np.int32)
        assert back.max() == 65535


class TestContrastMetric:
    def test_equal_psnrs_give_zero(self):
        assert contrast_metric(20.0, 20.0) == 0.0

    def test_25_vs_20_gives_quarter(self):
        assert contrast_metric(25.0, 20.0) == pytest.approx(0.25)

    def test_nonpositive_base_rejected(self):
        with pytest.raises(ValueError):
            contrast_metric(10.0, 0.0)


class TestReport:
    def _records(self, n=5, seed=0):
        rng = np.random.default_rng(seed)
        return [
            fidelity_record(f"img{i}", rng.random((3, 16, 16)), rng.random((3, 16, 16)))
            for i in range(n)
        ]

    def test_aggregate_recomputable_from_per_image(self):
        report = MetricsReport.from_per_image(self._records())
        again = aggregate_metrics(report.per_image)
        assert again == report.aggregate

    def test_save_load_round_trip(self, tmp_path):
        report = MetricsReport.from_per_image(self._records(), {"lpips": "adapter unavailable"})
        report.save(tmp_path / "r.json")
        back = MetricsReport.load(tmp_path / "r.json")
        assert back.aggregate == report.aggregate
        assert back.per_image == report.per_image
        assert back.unavailable == report.unavailable

    def test_median_std_formatting(self):
        assert format_median_std({"median": 25.134, "std": 2.461}) == "25.13 (± 2.46)"
