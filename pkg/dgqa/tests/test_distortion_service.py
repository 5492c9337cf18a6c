import numpy as np
import pytest

from dgqa.errors import InputValidationError, RegistryError
from dgqa.models import DistortionSpec, RasterImage
from dgqa.services.distortion_service import (
    DEFAULT_REGISTRY, apply_distortion, generate_domain, get_family, psnr, psnr_to_pseudo_mos, pseudo_label,
    registry_default,
)
from dgqa.services.reference_service import synthesize_reference, synthesize_references

DEFAULT_IDS = [1, 2, 3, 9, 10, 11, 13, 14, 16, 17, 18, 19, 22, 24, 25]


class TestRegistry:
    def test_default_registry_ids(self):
        assert [i for i, _ in registry_default()] == DEFAULT_IDS

    def test_every_family_has_five_levels(self):
        for _, family in registry_default():
            assert len(family.levels) == 5

    def test_unknown_family(self):
        with pytest.raises(RegistryError) as excinfo:
            get_family(4)
        assert isinstance(excinfo.value, KeyError)
        with pytest.raises(RegistryError):
            apply_distortion(RasterImage.constant(0.5), DistortionSpec(family=4, level=1))


class TestApplyDistortion:
    @pytest.mark.parametrize("family", DEFAULT_IDS)
    def test_deterministic_and_in_range(self, reference, family):
        """Same image, family, level and seed give bit-identical output in [0, 1]"""
        spec = DistortionSpec(family=family, level=3, seed=7)
        first = apply_distortion(reference, spec)
        second = apply_distortion(reference, spec)
        assert first.same_as(second)
        assert first.shape == reference.shape
        assert 0.0 <= first.pixels.min() and first.pixels.max() <= 1.0

    def test_seed_changes_stochastic_output(self, reference):
        a = apply_distortion(reference, DistortionSpec(family=11, level=3, seed=1))
        b = apply_distortion(reference, DistortionSpec(family=11, level=3, seed=2))
        assert not a.same_as(b)

    @pytest.mark.parametrize("level", [1, 3, 5])
    def test_impulse_noise_replaces_exact_pixel_count(self, level):
        image = RasterImage.constant(0.5)
        out = apply_distortion(image, DistortionSpec(family=13, level=level, seed=3))
        changed = np.any(out.pixels != image.pixels, axis=2).sum()
        fraction = DEFAULT_REGISTRY[13].parameter(level)
        assert changed == int(np.floor(fraction * 64 * 64))

    def test_non_square_images_keep_shape(self):
        image = RasterImage(synthesize_reference(96, seed=4).pixels[:70, :90, :].copy())
        for family in (9, 10, 22):
            assert apply_distortion(image, DistortionSpec(family=family, level=5)).shape == (70, 90, 3)

    @pytest.mark.parametrize("family", DEFAULT_IDS)
    def test_psnr_decreases_with_level(self, references, family):
        """Mean PSNR over the references never increases with severity"""
        means = [np.mean([psnr(ref, apply_distortion(ref, DistortionSpec(family=family, level=lv, seed=5)))
                          for ref in references])
                 for lv in range(1, 6)]
        assert all(b <= a + 1e-9 for a, b in zip(means, means[1:]))


class TestPseudoLabel:
    def test_identical_images_hit_the_cap(self, reference):
        assert psnr(reference, reference) == 100.0
        assert pseudo_label(reference, reference) == 100.0

    def test_uniform_offset(self):
        """A uniform 0.1 offset gives 20 dB and pseudo-MOS 100 * 5 / 35"""
        a = RasterImage.constant(0.5)
        b = RasterImage.constant(0.6)
        assert psnr(a, b) == pytest.approx(20.0)
        assert pseudo_label(a, b) == pytest.approx(14.2857, abs=1e-4)

    def test_clamping(self):
        assert psnr_to_pseudo_mos(10.0) == 0.0
        assert psnr_to_pseudo_mos(60.0) == 100.0

    def test_dimension_mismatch(self):
        with pytest.raises(InputValidationError):
            psnr(RasterImage.constant(0.5), RasterImage.constant(0.5, 80, 80))


class TestGenerateDomain:
    def test_one_sample_per_reference_and_level(self, references):
        ds = generate_domain(references, 1, [1, 3, 5], seed=0)
        assert len(ds) == len(references) * 3
        assert ds.samples[0].sample_id == "d01_ref_0000_l1"
        assert set(ds.reference_ids) == {f"ref_{i:04d}" for i in range(len(references))}
        assert np.all((ds.qualities >= 0) & (ds.qualities <= 100))

    def test_independent_of_worker_count(self, references):
        serial = generate_domain(references, 11, [2, 4], seed=9)
        threaded = generate_domain(references, 11, [2, 4], seed=9, max_workers=3)
        assert [s.sample_id for s in serial.samples] == [s.sample_id for s in threaded.samples]
        assert all(a.image.same_as(b.image) for a, b in zip(serial.samples, threaded.samples))
        assert np.array_equal(serial.qualities, threaded.qualities)

    def test_quality_drops_with_level(self, references):
        ds = generate_domain(references, 1, [1, 5], seed=0)
        by_level = {lv: np.mean([s.quality for s in ds.samples if s.level == lv]) for lv in (1, 5)}
        assert by_level[1] > by_level[5]

    def test_validation(self, references):
        with pytest.raises(InputValidationError):
            generate_domain([], 1, [1], seed=0)
        with pytest.raises(InputValidationError):
            generate_domain(references, 1, [], seed=0)
        with pytest.raises(RegistryError):
            generate_domain(references, 4, [1], seed=0)
        with pytest.raises(InputValidationError):
            generate_domain(references, 1, [1], seed=0, reference_ids=["only_one"])
        with pytest.raises(InputValidationError):
            generate_domain(references, 1, [2.5], seed=0)


class TestReferenceCorpus:
    def test_deterministic(self):
        a = synthesize_references(2, size=64, seed=3)
        b = synthesize_references(2, size=64, seed=3)
        assert all(x.same_as(y) for x, y in zip(a, b))
        assert not a[0].same_as(a[1])

    def test_value_range(self):
        img = synthesize_reference(64, seed=1)
        assert img.pixels.min() >= 0.05 - 1e-12
        assert img.pixels.max() <= 0.95 + 1e-12

    def test_validation(self):
        with pytest.raises(InputValidationError):
            synthesize_reference(32, seed=0)
        with pytest.raises(InputValidationError):
            synthesize_references(0)
