"""Synthetic scene generator contracts."""

import numpy as np
import pytest

from crowdcount.synth import BACKGROUND_STYLES, synth_scene


def test_zero_people_empty_annotations():
    image, ann = synth_scene(seed=0, n_people=0)
    assert ann.count == 0
    assert image.shape == (256, 256, 3)
    assert image.dtype == np.uint8


def test_count_matches_request():
    _, ann = synth_scene(seed=1, n_people=50)
    assert len(ann.points) == 50


def test_deterministic_bit_identical():
    img1, ann1 = synth_scene(seed=42, n_people=20)
    img2, ann2 = synth_scene(seed=42, n_people=20)
    assert np.array_equal(img1, img2)
    assert np.array_equal(ann1.points, ann2.points)


def test_different_seeds_differ():
    img1, _ = synth_scene(seed=1, n_people=10)
    img2, _ = synth_scene(seed=2, n_people=10)
    assert not np.array_equal(img1, img2)


def test_all_styles_render():
    for style in BACKGROUND_STYLES:
        image, ann = synth_scene(seed=3, n_people=5, size=(64, 64), background_style=style)
        assert image.shape == (64, 64, 3)
        assert ann.count == 5


def test_points_inside_image():
    _, ann = synth_scene(seed=4, n_people=60, size=(128, 128))
    x, y = ann.points[:, 0], ann.points[:, 1]
    assert (x >= 0).all() and (x < 128).all()
    assert (y >= 0).all() and (y < 128).all()


def test_overcrowded_names_capacity():
    with pytest.raises(ValueError, match="capacity"):
        synth_scene(seed=0, n_people=100_000, size=(64, 64))


def test_invalid_args():
    with pytest.raises(ValueError):
        synth_scene(seed=0, n_people=1, size=(32, 64))
    with pytest.raises(ValueError):
        synth_scene(seed=0, n_people=-1)
    with pytest.raises(ValueError):
        synth_scene(seed=0, n_people=1, background_style="lava")
