"""Rendering, perturbation, and noise-estimation tests."""

import numpy as np
import pytest

from captcha_grid_lab.geometry import BoundingBox
from captcha_grid_lab.imaging import (
    PerturbationConfig,
    PerturbationRecord,
    Scene,
    add_gaussian_noise,
    apply_record,
    augment_pipeline,
    blur,
    classify_perturbed,
    decode_png,
    encode_png,
    estimate_noise_sigma,
    noise_only_record,
    read_record_sidecar,
    render_scene,
    styled_object,
    write_image_with_record,
)


def flat_gray(value=128, size=256):
    return np.full((size, size, 3), value, np.uint8)


class TestRenderScene:
    def test_empty_scene_deterministic(self):
        scene = Scene(200, 150)
        a = render_scene(scene, seed=3)
        b = render_scene(scene, seed=3)
        assert a.shape == (150, 200, 3)
        assert (a == b).all()

    def test_different_seed_differs(self):
        scene = Scene(64, 64)
        assert not (render_scene(scene, 1) == render_scene(scene, 2)).all()

    def test_object_pixels_stay_inside_box(self):
        box = BoundingBox(100, 100, 200, 200)
        for shape in ("rect", "ellipse", "triangle"):
            scene = Scene(400, 400, (styled_object("bus", box, shape),))
            img = render_scene(scene, 0)
            background = render_scene(Scene(400, 400), 0)
            changed = np.argwhere((img != background).any(axis=2))
            assert changed.size > 0
            ys, xs = changed[:, 0], changed[:, 1]
            # pixel centers at +0.5 must lie inside the box
            assert xs.min() + 0.5 >= box.x_min and xs.max() + 0.5 <= box.x_max
            assert ys.min() + 0.5 >= box.y_min and ys.max() + 0.5 <= box.y_max

    def test_rendered_boxes_are_tight(self):
        box = BoundingBox(100, 100, 220, 180)
        scene = Scene(400, 400, (styled_object("car", box, "ellipse"),))
        img = render_scene(scene, 0)
        background = render_scene(Scene(400, 400), 0)
        changed = np.argwhere((img != background).any(axis=2))
        ys, xs = changed[:, 0], changed[:, 1]
        assert xs.min() + 0.5 <= box.x_min + 2 and xs.max() + 0.5 >= box.x_max - 2
        assert ys.min() + 0.5 <= box.y_min + 2 and ys.max() + 0.5 >= box.y_max - 2

    def test_painter_order(self):
        below = styled_object("bus", BoundingBox(50, 50, 150, 150), "rect")
        above = styled_object("car", BoundingBox(100, 100, 200, 200), "rect")
        img = render_scene(Scene(300, 300, (below, above)), 0)
        # overlap region shows the later object's color
        assert tuple(img[120, 120]) == above.style.color
        assert tuple(img[60, 60]) == below.style.color

    def test_scene_validation(self):
        with pytest.raises(ValueError):
            Scene(100, 100, (styled_object("bus", BoundingBox(50, 50, 150, 90), "rect"),))
        with pytest.raises(ValueError):
            Scene(0, 100)


class TestGaussianNoise:
    def test_sigma_zero_is_identity(self):
        img = flat_gray()
        out = add_gaussian_noise(img, 0.0, 42)
        assert (out == img).all()
        assert out is not img

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            add_gaussian_noise(flat_gray(), -1.0, 0)

    def test_std_matches_requested_scale(self):
        # 0.1 * 255 = 25.5, mid-gray so clipping is negligible
        img = flat_gray(128, 600)
        out = add_gaussian_noise(img, 25.5, 7)
        delta = out.astype(float) - 128.0
        assert delta.size >= 1_000_000
        assert abs(delta.std() - 25.5) <= 0.05 * 25.5

    def test_seeds_differ(self):
        img = flat_gray()
        a = add_gaussian_noise(img, 10, 1)
        b = add_gaussian_noise(img, 10, 2)
        assert a.shape == b.shape
        assert not (a == b).all()


class TestBlur:
    @pytest.mark.parametrize("kind,param", [("gaussian", 2.0), ("median", 5), ("average", 5)])
    def test_constant_preserved(self, kind, param):
        img = flat_gray(77, 64)
        assert (blur(img, kind, param) == img).all()

    def test_average_single_white_pixel(self):
        img = np.zeros((9, 9, 3), np.uint8)
        img[4, 4] = 255
        out = blur(img, "average", 3)
        # 255 / 9 = 28.33..., rounds half-away-from-zero to 28
        neighborhood = out[3:6, 3:6]
        assert (neighborhood == 28).all()
        outside = out.copy()
        outside[3:6, 3:6] = 0
        assert (outside == 0).all()

    def test_gaussian_reduces_variance(self):
        noisy = add_gaussian_noise(flat_gray(128, 128), 20, 3)
        blurred = blur(noisy, "gaussian", 5.0)
        assert blurred.astype(float).var() < noisy.astype(float).var() / 4

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            blur(flat_gray(), "median", 4)
        with pytest.raises(ValueError):
            blur(flat_gray(), "average", 2)
        with pytest.raises(ValueError):
            blur(flat_gray(), "motion", 3)

    def test_dimensions_unchanged(self):
        img = add_gaussian_noise(flat_gray(100, 50), 5, 1)
        for kind, param in (("gaussian", 1.5), ("median", 3), ("average", 7)):
            assert blur(img, kind, param).shape == img.shape


class TestEstimateNoiseSigma:
    def test_constant_image_is_zero(self):
        assert estimate_noise_sigma(flat_gray()) == 0.0

    def test_recovers_injected_sigma(self):
        estimates = [
            estimate_noise_sigma(add_gaussian_noise(flat_gray(), 10, seed))
            for seed in range(64)
        ]
        assert 8.5 <= np.mean(estimates) <= 11.5

    def test_clean_render_is_below_two(self):
        scene = Scene(
            400,
            400,
            (
                styled_object("bus", BoundingBox(20, 20, 180, 170), "rect"),
                styled_object("car", BoundingBox(220, 230, 380, 390), "ellipse"),
            ),
        )
        assert estimate_noise_sigma(render_scene(scene, 4)) < 2.0

    def test_monotone_in_sigma(self):
        img = flat_gray()
        means = []
        for sigma in (2.0, 6.0, 12.0):
            means.append(
                np.mean(
                    [estimate_noise_sigma(add_gaussian_noise(img, sigma, s)) for s in range(32)]
                )
            )
        assert means[0] < means[1] < means[2]

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            estimate_noise_sigma(np.zeros((1, 10, 3), np.uint8))
        with pytest.raises(ValueError):
            estimate_noise_sigma(np.zeros((10, 10), np.uint8))


class TestClassifyPerturbed:
    def test_threshold_boundary_values(self):
        assert classify_perturbed(14.86) is True
        assert classify_perturbed(10.0) is False  # strict inequality
        assert classify_perturbed(1.9) is False

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            classify_perturbed(-0.1)


class TestAugmentPipeline:
    def test_all_probabilities_zero(self):
        config = PerturbationConfig(p_brightness=0, p_contrast=0, p_noise=0, p_blur=0)
        img = flat_gray()
        out, record = augment_pipeline(img, config, 9)
        assert (out == img).all()
        assert record.ops == ()
        assert record.total_sigma == 0.0

    def test_noise_only_records_sigma_in_range(self):
        config = PerturbationConfig(p_brightness=0, p_contrast=0, p_noise=1.0, p_blur=0)
        _, record = augment_pipeline(flat_gray(), config, 123)
        assert len(record.ops) == 1
        name, params = record.ops[0]
        assert name == "noise"
        assert 0.0 < params["sigma"] <= 51.0
        assert record.total_sigma == params["sigma"]

    def test_deterministic_per_seed(self):
        config = PerturbationConfig(p_brightness=1, p_contrast=1, p_noise=1, p_blur=1)
        img = add_gaussian_noise(flat_gray(), 3, 0)
        a, rec_a = augment_pipeline(img, config, 55)
        b, rec_b = augment_pipeline(img, config, 55)
        assert (a == b).all()
        assert rec_a == rec_b

    def test_record_replays_byte_exactly(self):
        config = PerturbationConfig(p_brightness=1, p_contrast=1, p_noise=1, p_blur=1)
        img = render_scene(Scene(128, 128, (styled_object("bus", BoundingBox(10, 10, 90, 90), "rect"),)), 2)
        out, record = augment_pipeline(img, config, 99)
        assert (apply_record(img, record) == out).all()

    def test_fixed_op_order(self):
        config = PerturbationConfig(p_brightness=1, p_contrast=1, p_noise=1, p_blur=1)
        _, record = augment_pipeline(flat_gray(), config, 1)
        assert [name for name, _ in record.ops] == ["brightness", "contrast", "noise", "blur"]

    def test_malformed_config_rejected(self):
        with pytest.raises(ValueError):
            PerturbationConfig(p_noise=1.5)
        with pytest.raises(ValueError):
            PerturbationConfig(noise_sigma=(5.0, 1.0))
        with pytest.raises(ValueError):
            PerturbationConfig(blur_k=(4, 16))

    def test_record_json_round_trip(self):
        record = noise_only_record(12.5, 999)
        again = PerturbationRecord.from_dict(record.to_dict())
        assert again == record


class TestPngIO:
    def test_encode_decode_round_trip(self):
        img = add_gaussian_noise(flat_gray(90, 40), 15, 8)
        assert (decode_png(encode_png(img)) == img).all()

    def test_sidecar_round_trip(self, tmp_path):
        img = flat_gray(10, 16)
        record = noise_only_record(4.2, 31)
        path = tmp_path / "sample.png"
        write_image_with_record(path, img, record)
        assert (tmp_path / "sample.png.perturb.json").exists()
        assert read_record_sidecar(path) == record
