# Copyright Contributors to the cagesplat project
# SPDX-License-Identifier: Apache-2.0

"""Cage-guided Gaussian splat deformation from tactile sensing."""

from ._cagesplat import (
    Binding,
    Cage,
    Error,
    bend_angle,
    bind,
    build_cage,
    chamfer,
    fit_labels,
    interpolate,
    oracle_deform,
    render,
    run_eval,
    run_fit_labels,
    run_gen,
    run_infer,
    run_train,
    scene_centers,
    ssim,
    twist_angle,
    voxel_iou,
)

__version__ = "0.1.0"

__all__ = [
    "Binding",
    "Cage",
    "Error",
    "bend_angle",
    "bind",
    "build_cage",
    "chamfer",
    "fit_labels",
    "interpolate",
    "oracle_deform",
    "render",
    "run_eval",
    "run_fit_labels",
    "run_gen",
    "run_infer",
    "run_train",
    "scene_centers",
    "ssim",
    "twist_angle",
    "voxel_iou",
]
