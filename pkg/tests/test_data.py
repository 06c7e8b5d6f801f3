import numpy as np
import pytest

from parahydra.data import (
    Occlusion,
    gen_synthetic_views,
    read_ppm,
    read_views,
    synthetic_dataset,
    write_pgm,
    write_ppm,
)
from parahydra.transforms import InputError


def _best_offset(a, b, max_shift):
    """Shift s maximizing the normalized correlation of a[..., s:] with b[..., :W-s]."""
    scores = []
    w = a.shape[-1]
    for s in range(max_shift + 1):
        x = a[:, :, s:].ravel() - a[:, :, s:].mean()
        y = b[:, :, : w - s].ravel() - b[:, :, : w - s].mean()
        scores.append(float(x @ y) / (np.linalg.norm(x) * np.linalg.norm(y)))
    return int(np.argmax(scores))


class TestSyntheticViews:
    def test_zero_disparity_views_identical(self):
        vs = gen_synthetic_views(5, 4, 32, 40)
        for v in vs.views[1:]:
            np.testing.assert_array_equal(v, vs.views[0])

    def test_same_seed_same_set(self):
        occ = [Occlusion(1, 2, 3, 4, 5)]
        a = gen_synthetic_views(9, 3, 24, 32, 2, occ)
        b = gen_synthetic_views(9, 3, 24, 32, 2, occ)
        for x, y in zip(a.views, b.views):
            np.testing.assert_array_equal(x, y)

    def test_different_seeds_differ(self):
        a = gen_synthetic_views(1, 1, 16, 16).views[0]
        b = gen_synthetic_views(2, 1, 16, 16).views[0]
        assert not np.array_equal(a, b)

    def test_range_and_shape(self):
        vs = gen_synthetic_views(0, 3, 20, 28, 5)
        assert vs.k == 3
        for v in vs.views:
            assert v.shape == (3, 20, 28) and v.dtype == np.float64
            assert v.min() >= 0.0 and v.max() <= 1.0

    @pytest.mark.parametrize("d", [1, 3, 6, 15])
    def test_correlation_peak_at_disparity(self, d):
        vs = gen_synthetic_views(d, 2, 48, 64, d)
        assert _best_offset(vs.views[0], vs.views[1], 15) == d

    def test_shift_is_exact(self):
        vs = gen_synthetic_views(4, 3, 16, 32, 3)
        np.testing.assert_array_equal(vs.views[1][:, :, :-3], vs.views[0][:, :, 3:])
        np.testing.assert_array_equal(vs.views[2][:, :, :-6], vs.views[0][:, :, 6:])

    def test_occlusion_only_touches_its_rectangle(self):
        plain = gen_synthetic_views(3, 2, 24, 24, 2)
        occ = gen_synthetic_views(3, 2, 24, 24, 2, [Occlusion(1, 5, 6, 4, 7)])
        np.testing.assert_array_equal(occ.views[0], plain.views[0])
        diff = np.any(occ.views[1] != plain.views[1], axis=0)
        assert diff[5:9, 6:13].mean() > 0.9
        diff[5:9, 6:13] = False
        assert not diff.any()

    @pytest.mark.parametrize(
        "args",
        [
            (0, 0, 16, 16, 0, ()),
            (0, 2, 16, 16, 4, ()),
            (0, 2, 16, 16, -1, ()),
            (0, 2, 16, 16, 0, (Occlusion(2, 0, 0, 2, 2),)),
            (0, 2, 16, 16, 0, (Occlusion(0, 10, 10, 8, 2),)),
            (0, 2, 16, 16, 0, (Occlusion(0, 1, 1, 0, 2),)),
        ],
    )
    def test_invalid_geometry(self, args):
        with pytest.raises(InputError):
            gen_synthetic_views(*args)

    def test_dataset_scenes_distinct_and_reproducible(self):
        a = synthetic_dataset(0, 3, 2, 16, 16, 2)
        b = synthetic_dataset(0, 3, 2, 16, 16, 2)
        assert len(a) == 3
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.views[1], y.views[1])
        assert not np.array_equal(a[0].views[0], a[1].views[0])


class TestPixmapIO:
    def test_ppm_roundtrip_8bit(self, tmp_path, rng):
        img = rng.integers(0, 256, (3, 7, 9)) / 255.0
        path = tmp_path / "x.ppm"
        write_ppm(path, img)
        assert path.read_bytes().startswith(b"P6")
        np.testing.assert_allclose(read_ppm(path), img, atol=1e-12)

    def test_values_are_clipped_and_rounded(self, tmp_path):
        img = np.array([-0.2, 0.5, 1.7]).reshape(3, 1, 1)
        write_ppm(tmp_path / "c.ppm", img)
        np.testing.assert_array_equal(read_ppm(tmp_path / "c.ppm").ravel() * 255, [0, 128, 255])

    def test_pgm(self, tmp_path):
        m = np.linspace(0, 1, 12).reshape(3, 4)
        write_pgm(tmp_path / "m.pgm", m)
        assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5")
        back = read_ppm(tmp_path / "m.pgm")
        np.testing.assert_allclose(back[0], np.round(m * 255) / 255)

    def test_unreadable(self, tmp_path):
        bad = tmp_path / "bad.ppm"
        bad.write_bytes(b"not an image")
        with pytest.raises(InputError):
            read_ppm(bad)
        with pytest.raises(InputError):
            read_ppm(tmp_path / "missing.ppm")

    def test_wrong_shape(self, tmp_path):
        with pytest.raises(InputError):
            write_ppm(tmp_path / "x.ppm", np.zeros((4, 4)))

    def test_read_views_dimension_mismatch(self, tmp_path):
        write_ppm(tmp_path / "a.ppm", np.zeros((3, 4, 4)))
        write_ppm(tmp_path / "b.ppm", np.zeros((3, 4, 5)))
        with pytest.raises(InputError, match="differ"):
            read_views([tmp_path / "a.ppm", tmp_path / "b.ppm"])
