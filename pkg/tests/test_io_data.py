import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfuse import data
from qfuse.data import SynthConfig
from qfuse.imageio import ImageFormatError, read_image, read_pgm, to_uint8, write_image
from qfuse.tensor import DimensionError


class TestImageIO:
    def test_pgm_bytes(self, tmp_path):
        path = tmp_path / "a.pgm"
        write_image(path, np.array([[0.0, 1.0, 0.5]]))
        assert path.read_bytes() == b"P5\n3 1\n255\n" + bytes([0, 255, 128])

    def test_pgm_header_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# made by hand\n2 # width\n1\n255\n\x10\x20")
        np.testing.assert_array_equal(read_pgm(path), [[16, 32]])

    @pytest.mark.parametrize("suffix", [".pgm", ".png"])
    def test_round_trip(self, tmp_path, suffix):
        img = np.random.default_rng(0).random((5, 7))
        path = tmp_path / f"m{suffix}"
        write_image(path, img)
        back = read_image(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(to_uint8(back), to_uint8(img))

    def test_rejects_ascii_pgm(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0\n")
        with pytest.raises(ImageFormatError):
            read_image(path)

    def test_rejects_truncated(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(ImageFormatError) as err:
            read_image(path)
        assert err.value.path == str(path)

    def test_rejects_color_png(self, tmp_path):
        from PIL import Image

        path = tmp_path / "rgb.png"
        Image.new("RGB", (2, 2)).save(path)
        with pytest.raises(ImageFormatError):
            read_image(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageFormatError):
            read_image(tmp_path / "nope.pgm")

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 31 - 1))
    def test_pgm_round_trip_property(self, h, w, seed):
        import tempfile
        from pathlib import Path

        pix = np.random.default_rng(seed).integers(0, 256, (h, w)).astype(np.uint8)
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "x.pgm"
            write_image(p, pix / 255.0)
            np.testing.assert_array_equal(read_pgm(p), pix)


class TestSynth:
    def test_box_blur_matches_window_mean(self):
        rng = np.random.default_rng(0)
        mask = (rng.random((10, 9)) > 0.5).astype(np.uint8)
        out = data.box_blur(mask, 2)
        padded = np.pad(mask.astype(float), 2, mode="edge")
        for y in range(10):
            for x in range(9):
                assert out[y, x] == pytest.approx(padded[y : y + 5, x : x + 5].mean(), abs=1e-12)

    def test_quality_one_is_noise_free(self):
        s = data.generate_samples(SynthConfig(n_samples=3, quality=(1.0, 0.0), seed=4))
        for sample in s:
            np.testing.assert_allclose(sample.images[0], data.box_blur(sample.gt, 2), atol=1e-6)

    @staticmethod
    def _mean_corr(sigma_max):
        cfg = SynthConfig(n_samples=50, quality=(0.0, 0.0), noise_sigma_max=sigma_max, seed=1)
        return np.mean([np.corrcoef(s.images[0].ravel(), s.gt.ravel())[0, 1] for s in data.generate_samples(cfg)])

    @pytest.mark.xfail(strict=True, reason="clamping to [0, 1] keeps q=0 correlation near 0.4 at sigma 0.8; see decisions ledger")
    def test_quality_zero_uncorrelated_at_low_sigma(self):
        assert self._mean_corr(0.8) < 0.3

    @pytest.mark.parametrize("sigma_max", [1.2, SynthConfig().noise_sigma_max])
    def test_quality_zero_uncorrelated(self, sigma_max):
        assert self._mean_corr(sigma_max) < 0.3

    def test_correlation_falls_with_quality(self):
        corrs = []
        for q in (1.0, 0.5, 0.0):
            cfg = SynthConfig(n_samples=10, quality=(q, q), seed=3)
            corrs.append(np.mean([np.corrcoef(s.images[0].ravel(), s.gt.ravel())[0, 1] for s in data.generate_samples(cfg)]))
        assert corrs[0] > corrs[1] > corrs[2]

    def test_gt_coverage_and_range(self):
        for s in data.generate_samples(SynthConfig(n_samples=20, seed=2)):
            assert 0.10 <= s.gt.mean() <= 0.40
            assert set(np.unique(s.gt)) <= {0.0, 1.0}
            for im in s.images:
                assert im.dtype == np.float32 and im.min() >= 0 and im.max() <= 1
            assert all(0 <= q <= 1 for q in s.qualities)

    def test_deterministic(self):
        a = data.generate_samples(SynthConfig(n_samples=4, seed=9))
        b = data.generate_samples(SynthConfig(n_samples=4, seed=9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.images[1], y.images[1])
            assert x.qualities == y.qualities

    def test_prefix_stable(self):
        """Sample i does not depend on how many samples are generated."""
        a = data.generate_samples(SynthConfig(n_samples=2, seed=9))
        b = data.generate_samples(SynthConfig(n_samples=5, seed=9))
        np.testing.assert_array_equal(a[1].gt, b[1].gt)

    @pytest.mark.parametrize("kwargs", [{"image_size": 60}, {"quality": (0.5,)}, {"quality": (1.5, 0)},
                                        {"quality": "bad"}, {"noise_sigma_max": -1}])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValueError):
            SynthConfig(**kwargs)

    def test_mixed_sizes_rejected(self):
        with pytest.raises(DimensionError):
            data.SaliencySample([np.zeros((4, 4)), np.zeros((4, 5))], np.zeros((4, 4)))


class TestDatasetDir:
    def test_write_and_load(self, tmp_path):
        cfg = SynthConfig(n_samples=3, seed=5, quality=(0.9, 0.1))
        written = data.generate_dataset(cfg, tmp_path)
        header = (tmp_path / "manifest.csv").read_text().splitlines()[0]
        assert header == "id,quality1,quality2,seed"
        assert (tmp_path / "sample_0002_mod2.pgm").exists()
        loaded = data.load_dataset(tmp_path)
        assert [s.name for s in loaded] == [s.name for s in written]
        for a, b in zip(written, loaded):
            np.testing.assert_array_equal(a.gt, b.gt)
            np.testing.assert_array_equal(to_uint8(a.images[0]), to_uint8(b.images[0]))
            assert b.qualities == (0.9, 0.1)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_dataset(tmp_path)

    def test_load_sample_without_gt(self, tmp_path):
        write_image(tmp_path / "a.pgm", np.zeros((8, 8)))
        write_image(tmp_path / "b.pgm", np.ones((8, 8)))
        s = data.load_sample([tmp_path / "a.pgm", tmp_path / "b.pgm", None])
        assert s.gt is None and s.size == (8, 8)
