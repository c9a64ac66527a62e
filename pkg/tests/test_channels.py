"""Channel generator tests: sinc exactness, linearity, scene geometry against
an independent mirror-image computation, beam labels, and container I/O."""

import math

import numpy as np
import pytest

from spartran import channels as ch


def make_scene(**overrides):
    base = dict(
        extent=(0.0, 20.0, 0.0, 12.0),
        anchors=((0.0, 0.0), (20.0, 12.0)),
        paths_per_link=1,
        reflectors=0,
        noise_sigma=0.0,
        seed=7,
        num_taps=16,
        bandwidth_hz=1e8,
    )
    base.update(overrides)
    return ch.SceneConfig(**base)


class TestSynthCir:
    def test_on_grid_single_path_is_one_hot(self):
        w = 1e8
        rng = np.random.default_rng(0)
        path = ch.PathSpec(tau=5.0 / w, magnitude=1.0, phase=0.0)
        s = ch.synth_cir([path], 16, w, 0.0, rng)
        expected = np.zeros(16)
        expected[4] = 1.0  # tap m=5, stored 0-based
        np.testing.assert_allclose(s.re, expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(s.im, np.zeros(16), rtol=0, atol=1e-12)

    def test_linearity_over_path_lists(self):
        w = 2e7
        rng = np.random.default_rng(1)
        paths_a = [ch.PathSpec(3.2 / w, 0.8, 1.1), ch.PathSpec(7.9 / w, 0.3, -2.0)]
        paths_b = [ch.PathSpec(11.4 / w, 1.7, 0.4)]
        sa = ch.synth_cir(paths_a, 24, w, 0.0, rng)
        sb = ch.synth_cir(paths_b, 24, w, 0.0, rng)
        sab = ch.synth_cir(paths_a + paths_b, 24, w, 0.0, rng)
        np.testing.assert_allclose(
            sab.as_complex(), sa.as_complex() + sb.as_complex(), rtol=0, atol=1e-12
        )

    def test_noise_power(self):
        rng = np.random.default_rng(42)
        s = ch.synth_cir([], 4096, 1e8, 0.1, rng)
        power = float(np.mean(s.re**2 + s.im**2))
        assert abs(power - 0.01) < 0.0005

    def test_path_beyond_window_rejected(self):
        w = 1e8
        with pytest.raises(ValueError, match="beyond the observation window"):
            ch.synth_cir([ch.PathSpec(30.0 / w, 1.0, 0.0)], 16, w, 0.0, np.random.default_rng(0))


class TestSceneGeometry:
    def test_clamped_direct_delay(self):
        paths = ch.link_paths((2.0, 3.0), np.array([2.0, 3.0]), [])
        assert paths[0].tau == pytest.approx(0.1 / ch.SPEED_OF_LIGHT, rel=1e-12)

    def test_mirror_reflection_matches_hand_geometry(self):
        # vertical mirror line x=5: anchor (0,0) images to (10,0)
        line = (np.array([5.0, 0.0]), np.array([1.0, 0.0]))
        pos = np.array([3.0, 1.0])
        paths = ch.link_paths((0.0, 0.0), pos, [line])
        assert len(paths) == 2
        direct_len = math.sqrt(3.0**2 + 1.0**2)
        image_len = math.sqrt((3.0 - 10.0) ** 2 + 1.0**2)
        assert paths[0].tau == pytest.approx(direct_len / ch.SPEED_OF_LIGHT, rel=1e-12)
        assert paths[1].tau == pytest.approx(image_len / ch.SPEED_OF_LIGHT, rel=1e-12)
        assert paths[0].magnitude == pytest.approx(1.0 / direct_len, rel=1e-12)
        assert paths[1].magnitude == pytest.approx(1.0 / image_len, rel=1e-12)
        for p in paths:
            assert -math.pi < p.phase <= math.pi

    def test_identical_positions_identical_channels(self):
        scene = make_scene()
        pos = np.array([[4.0, 5.0], [4.0, 5.0]])
        ds = ch.sample_scene(scene, pos)
        a, b = ds.samples[0], ds.samples[scene.num_anchors]
        assert a.re.tobytes() == b.re.tobytes()
        assert a.im.tobytes() == b.im.tobytes()

    def test_seeded_determinism_bitwise(self):
        scene = make_scene(noise_sigma=0.05, reflectors=2, paths_per_link=3)
        pos = ch.random_positions(scene, 10)
        d1 = ch.sample_scene(scene, pos)
        d2 = ch.sample_scene(scene, pos)
        for s1, s2 in zip(d1.samples, d2.samples):
            assert s1.re.tobytes() == s2.re.tobytes()
            assert s1.im.tobytes() == s2.im.tobytes()

    def test_grouping_and_labels(self):
        scene = make_scene()
        pos = ch.random_positions(scene, 5)
        ds = ch.sample_scene(scene, pos)
        assert len(ds) == 5 * scene.num_anchors
        assert ds.group_size == scene.num_anchors
        np.testing.assert_array_equal(ds.labels, pos)

    def test_position_outside_extent_rejected(self):
        scene = make_scene()
        with pytest.raises(ValueError, match="outside extent"):
            ch.sample_scene(scene, np.array([[50.0, 0.0]]))

    def test_empty_positions_rejected(self):
        scene = make_scene()
        with pytest.raises(ValueError, match="empty"):
            ch.sample_scene(scene, np.empty((0, 2)))


class TestBeamLabels:
    def test_on_beam_angle_maps_to_that_beam(self):
        beams, _ = ch.beam_codebook(16)
        for b in (0, 3, 8, 15):
            assert ch.best_beam(16, float(beams[b])) == b

    def test_label_range_and_codebook_sizes(self):
        scene = make_scene(anchors=((10.0, 6.0),))
        pos = ch.random_positions(scene, 40)
        for size in (16, 32, 64, 128):
            ds = ch.make_beam_dataset(scene, size, pos)
            assert ds.labels.min() >= 0
            assert ds.labels.max() < size

    def test_all_labels_occur_under_uniform_positions(self):
        scene = make_scene(anchors=((10.0, 6.0),), num_taps=8)
        pos = ch.random_positions(scene, 10_000)
        ds = ch.make_beam_dataset(scene, 16, pos)
        assert set(np.unique(ds.labels)) == set(range(16))

    def test_tiny_codebook_rejected(self):
        scene = make_scene()
        with pytest.raises(ValueError, match="codebook_size"):
            ch.make_beam_dataset(scene, 1, np.array([[1.0, 1.0]]))


class TestNormalizeGlobal:
    def _dataset_with_peaks(self, peaks):
        samples = []
        for p in peaks:
            re = np.zeros(8)
            re[2] = p
            samples.append(ch.ChannelSample(re, np.zeros(8), 1e8))
        return ch.LinkDataset(samples=samples)

    def test_relative_strengths_preserved(self):
        ds = self._dataset_with_peaks([1.0, 2.0, 100.0])
        out = ch.normalize_global(ds)
        peaks = [s.magnitude.max() for s in out.samples]
        assert peaks[1] / peaks[0] == pytest.approx(2.0, rel=1e-12)
        assert peaks[2] / peaks[0] == pytest.approx(100.0, rel=1e-12)

    def test_percentile_peak_becomes_one(self):
        rng = np.random.default_rng(3)
        ds = self._dataset_with_peaks(rng.uniform(0.5, 30.0, 500))
        out = ch.normalize_global(ds)
        peaks = np.sort([s.magnitude.max() for s in out.samples])
        rank = math.ceil(0.99 * peaks.size)
        assert peaks[rank - 1] == 1.0

    def test_idempotent_up_to_recomputed_factor(self):
        rng = np.random.default_rng(4)
        ds = self._dataset_with_peaks(rng.uniform(0.5, 30.0, 100))
        once = ch.normalize_global(ds)
        twice = ch.normalize_global(once)
        for a, b in zip(once.samples, twice.samples):
            np.testing.assert_allclose(b.re, a.re, rtol=1e-12)

    def test_all_zero_rejected(self):
        ds = self._dataset_with_peaks([0.0, 0.0])
        with pytest.raises(ValueError, match="all-zero"):
            ch.normalize_global(ds)


class TestDatasetContainer:
    def test_round_trip_bitwise(self, tmp_path):
        scene = make_scene(noise_sigma=0.02)
        ds = ch.sample_scene(scene, ch.random_positions(scene, 6))
        path = tmp_path / "links.sprt"
        ch.save_dataset(ds, path)
        back = ch.load_dataset(path)
        assert back.label_kind == "position"
        assert back.group_size == ds.group_size
        np.testing.assert_array_equal(back.labels, ds.labels)
        for a, b in zip(ds.samples, back.samples):
            assert a.re.tobytes() == b.re.tobytes()
            assert a.im.tobytes() == b.im.tobytes()
            assert a.bandwidth_hz == b.bandwidth_hz
        ch.save_dataset(back, tmp_path / "again.sprt")
        assert (tmp_path / "again.sprt").read_bytes() == path.read_bytes()

    def test_beam_labels_round_trip(self, tmp_path):
        scene = make_scene(anchors=((10.0, 6.0),))
        ds = ch.make_beam_dataset(scene, 16, ch.random_positions(scene, 8))
        path = tmp_path / "beam.sprt"
        ch.save_dataset(ds, path)
        back = ch.load_dataset(path)
        assert back.label_kind == "beam"
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.sprt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ch.DataError, match="magic"):
            ch.load_dataset(path)

    def test_truncation_rejected(self, tmp_path):
        scene = make_scene()
        ds = ch.sample_scene(scene, ch.random_positions(scene, 3))
        path = tmp_path / "links.sprt"
        ch.save_dataset(ds, path)
        good = path.read_bytes()
        path.write_bytes(good[: len(good) - 17])
        with pytest.raises(ch.DataError, match="truncated"):
            ch.load_dataset(path)
