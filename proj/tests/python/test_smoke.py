# Copyright Contributors to the cagesplat project
# SPDX-License-Identifier: Apache-2.0

import math
import os
from pathlib import Path

import numpy as np
import pytest

import cagesplat

SOURCE = Path(os.environ.get("CAGESPLAT_SOURCE_DIR", Path(__file__).resolve().parents[2]))


def test_chamfer_and_iou():
    a = np.zeros((1, 3))
    b = np.array([[0.003, 0.0, 0.004]])
    assert cagesplat.chamfer(a, b) == pytest.approx(5.0)
    slab_a = np.array([[0.002 * i, 0.0, 0.0] for i in range(10)])
    assert cagesplat.voxel_iou(slab_a, slab_a + [0.002, 0.0, 0.0]) == pytest.approx(9.0 / 11.0)


def test_ssim_of_identical_images():
    img = np.random.default_rng(1).random((24, 32, 3))
    assert cagesplat.ssim(img, img) == pytest.approx(1.0)


def test_bind_interpolate_and_fit_round_trip():
    rng = np.random.default_rng(2)
    cage = cagesplat.build_cage([-0.05, -0.04, -0.01], [0.05, 0.04, 0.01], (3, 3, 3))
    assert cage.node_count == 27
    points = rng.uniform([-0.05, -0.04, -0.01], [0.05, 0.04, 0.01], size=(400, 3))
    binding = cagesplat.bind(cage, points)
    assert binding.weights.shape == (400, 8)
    np.testing.assert_allclose(binding.weights.sum(axis=1), 1.0, atol=1e-12)

    shift = np.tile([0.001, -0.002, 0.003], (27, 1))
    np.testing.assert_allclose(cagesplat.interpolate(binding, shift), np.tile(shift[0], (400, 1)), atol=1e-15)

    truth = rng.uniform(-0.01, 0.01, size=(27, 3))
    fitted = cagesplat.fit_labels(binding, cagesplat.interpolate(binding, truth))
    np.testing.assert_allclose(fitted, truth, atol=1e-6)


def test_oracle_bend_is_measured():
    s = np.linspace(-0.05, 0.05, 160)
    phi = np.linspace(0.0, 2.0 * math.pi, 12, endpoint=False)
    rod = np.array([[x, 0.01 * math.cos(p), 0.01 * math.sin(p)] for x in s for p in phi])
    moved = rod + cagesplat.oracle_deform(rod, "bend", math.radians(60), axis_angle=math.pi / 2, span=0.1)
    assert cagesplat.bend_angle(moved, rod) == pytest.approx(60.0, abs=1.5)


def test_errors_map_to_python_exceptions():
    with pytest.raises(ValueError):
        cagesplat.chamfer(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        cagesplat.oracle_deform(np.zeros((1, 3)), "stretch", 0.1)
    with pytest.raises(OSError):
        cagesplat.run_gen("/nonexistent/config.ini")


def test_pipeline_on_toy_config(tmp_path):
    config = SOURCE / "configs" / "toy.ini"
    gen = cagesplat.run_gen(config, out=tmp_path)
    assert gen["frames"] > 0
    assert cagesplat.run_fit_labels(config, out=tmp_path)["max_normal_residual"] < 1e-6
    assert len(cagesplat.run_train(config, out=tmp_path)["history"]) > 0
    assert cagesplat.run_infer(config, out=tmp_path)["frames"] > 0
    rows = cagesplat.run_eval(config, out=tmp_path)
    assert {r["region"] for r in rows} == {"center", "full"}
    assert all(math.isfinite(r["chamfer_mm"]) for r in rows)

    image = cagesplat.render(tmp_path / "infer" / "scene.cspl", width=64, height=40)
    assert image.shape == (40, 64, 3)
    assert image.max() > 0.0
    assert cagesplat.scene_centers(tmp_path / "infer" / "scene.cspl").shape[1] == 3
