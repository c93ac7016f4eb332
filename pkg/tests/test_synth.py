import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imnet import synth
from imnet.errors import DatasetError, PlacementError, ValidationError
from imnet.synth import AttackConfig

ALL_ATTACKS = AttackConfig.with_attacks(rotate=True, scale=True, blur=True, jpeg=True)


def iou(a, b):
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else np.count_nonzero(a & b) / union


class TestBase:
    def test_same_seed_same_bytes(self):
        assert synth.generate_base(7, 64).tobytes() == synth.generate_base(7, 64).tobytes()

    def test_range_and_dtype(self):
        img = synth.generate_base(3, 48)
        assert img.shape == (48, 48, 3) and img.dtype == np.uint8

    def test_different_seeds_differ(self):
        for s in range(100):
            a, b = synth.generate_base(2 * s, 64), synth.generate_base(2 * s + 1, 64)
            assert (a != b).any(axis=-1).mean() >= 0.01

    @pytest.mark.parametrize("size", [31, 257])
    def test_size_bounds(self, size):
        with pytest.raises(ValidationError):
            synth.generate_base(0, size)


class TestForge:
    def test_identity_paste_copies_pixels(self):
        s = synth.make_sample(11, 64)
        prov = s.provenance
        dx, dy = prov["paste_offset"]
        src = np.argwhere(s.truth == 1)
        # every source pixel lands on a tampered pixel with identical colour
        for r, c in src:
            if s.truth[r + dy, c + dx] == 2:
                assert (s.image[r + dy, c + dx] == s.image[r, c]).all()
        dst = s.truth == 2
        shifted = np.zeros_like(dst)
        rr, cc = src[:, 0] + dy, src[:, 1] + dx
        shifted[rr, cc] = True
        np.testing.assert_array_equal(shifted, dst)

    @pytest.mark.parametrize("attack", [AttackConfig(), ALL_ATTACKS], ids=["plain", "attacked"])
    def test_regions_disjoint_and_non_empty(self, attack):
        for s in synth.generate(40, 64, seed=5, attack=attack):
            src, dst = s.truth == 1, s.truth == 2
            assert src.any() and dst.any() and not (src & dst).any()
            assert set(np.unique(s.truth)) <= {0, 1, 2}

    def test_truth_reproduced_from_provenance(self):
        for s in synth.generate(40, 64, seed=9, attack=ALL_ATTACKS):
            again = synth.render_truth(json.loads(json.dumps(s.provenance)), 64)
            for k in (1, 2):
                assert iou(again == k, s.truth == k) >= 0.99

    def test_forged_fraction_over_500(self):
        frac = np.mean([synth.forged_fraction(s) for s in synth.generate(500, 64, seed=0)])
        assert 0.10 <= frac <= 0.40

    def test_provenance_keys(self):
        prov = synth.make_sample(1, 64, ALL_ATTACKS).provenance
        assert set(prov) == {"seed", "source_shape", "paste_offset", "rotation_degrees", "scale_factor",
                             "blur_sigma", "jpeg_quality"}
        assert -30 <= prov["rotation_degrees"] <= 30 and 0.8 <= prov["scale_factor"] <= 1.2
        assert 0 <= prov["blur_sigma"] <= 1.5 and 70 <= prov["jpeg_quality"] <= 95

    def test_no_attack_provenance(self):
        prov = synth.make_sample(1, 64).provenance
        assert prov["rotation_degrees"] == 0 and prov["scale_factor"] == 1
        assert prov["blur_sigma"] == 0 and prov["jpeg_quality"] is None

    def test_placement_failure(self):
        # a 32-pixel image cannot hold two disjoint copies of a region this large
        attack = AttackConfig(area_range=(0.2, 0.2), max_retries=1, max_regenerations=0)
        with pytest.raises(PlacementError):
            for seed in range(50):
                synth.forge(np.zeros((32, 32, 3), np.uint8), attack, seed)

    def test_attack_ranges_validated(self):
        with pytest.raises(ValidationError):
            AttackConfig(rotation_range=(-45.0, 0.0)).validate()
        with pytest.raises(ValidationError):
            AttackConfig(jpeg_range=(50, 90)).validate()

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10**9))
    def test_deterministic(self, seed):
        a, b = synth.make_sample(seed, 48, ALL_ATTACKS), synth.make_sample(seed, 48, ALL_ATTACKS)
        assert a.image.tobytes() == b.image.tobytes() and a.truth.tobytes() == b.truth.tobytes()
        assert a.provenance == b.provenance


class TestDatasetIO:
    def test_round_trip(self, tmp_path):
        samples = synth.generate(3, 32, seed=4)
        synth.write_dataset(tmp_path, samples)
        assert sorted(p.name for p in (tmp_path / "images").iterdir()) == ["00000.png", "00001.png", "00002.png"]
        items = synth.read_dataset(tmp_path)
        for (image_id, image, labels), s in zip(items, samples):
            np.testing.assert_array_equal(image, s.image)
            np.testing.assert_array_equal(labels, s.truth)
        prov = json.loads((tmp_path / "provenance" / "00001.json").read_text(encoding="utf-8"))
        assert prov == json.loads(json.dumps(samples[1].provenance))

    def test_missing_mask(self, tmp_path):
        synth.write_dataset(tmp_path, synth.generate(2, 32, seed=4))
        (tmp_path / "masks" / "00001.png").unlink()
        with pytest.raises(DatasetError, match="missing mask"):
            synth.read_dataset(tmp_path)

    def test_missing_layout(self, tmp_path):
        with pytest.raises(DatasetError):
            synth.read_dataset(tmp_path)
