"""Reference bundles: a rendered reference view packaged with its geo-anchors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import Intrinsics, to_level_pixel
from .features import FeaturePyramid, bilinear, build_pyramid
from .se3 import Pose
from .world import RenderedView, Scene, render, sample_geo_anchors

DEFAULT_ANCHORS = 500


@dataclass(frozen=True, eq=False)
class ReferenceBundle:
    reference_pyramid: FeaturePyramid
    predicted_pose: Pose
    intrinsics: Intrinsics
    anchors_world: np.ndarray  # (N, 3)
    anchor_pixels: np.ndarray  # (N, 2) full-resolution (u, v)
    ref_features: tuple  # per level, (N, C)
    ref_weights: tuple  # per level, (N,)
    frame_index: int = 0
    source_frame: int = -1  # latest estimate the prediction was built from; -1 = prior

    @property
    def n_anchors(self) -> int:
        return self.anchors_world.shape[0]


def bundle_from_view(
    view: RenderedView,
    n_anchors: int = DEFAULT_ANCHORS,
    rng_seed=0,
    frame_index: int = 0,
    source_frame: int = -1,
) -> ReferenceBundle:
    pyramid = build_pyramid(view)
    world, pixels = sample_geo_anchors(view, n_anchors, rng_seed)
    feats, weights = [], []
    for ell in range(3):
        u = to_level_pixel(pixels[:, 0], ell)
        v = to_level_pixel(pixels[:, 1], ell)
        fmap, umap = pyramid.level(ell)
        feats.append(bilinear(fmap.data, u, v, with_gradient=False))
        weights.append(bilinear(umap.values, u, v, with_gradient=False))
    return ReferenceBundle(
        reference_pyramid=pyramid,
        predicted_pose=view.pose,
        intrinsics=view.intrinsics,
        anchors_world=world,
        anchor_pixels=pixels,
        ref_features=tuple(feats),
        ref_weights=tuple(weights),
        frame_index=frame_index,
        source_frame=source_frame,
    )


def make_bundle(
    scene: Scene,
    predicted_pose: Pose,
    intrinsics: Intrinsics,
    n_anchors: int = DEFAULT_ANCHORS,
    rng_seed=0,
    frame_index: int = 0,
    source_frame: int = -1,
) -> ReferenceBundle:
    """Render at the predicted pose, build its pyramid and sample anchors."""
    view = render(scene, predicted_pose, intrinsics)
    return bundle_from_view(view, n_anchors, rng_seed, frame_index, source_frame)
