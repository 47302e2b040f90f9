"""Shared fixtures: toy category tables and small synthetic scenes."""

from __future__ import annotations

import numpy as np
import pytest

from panofuse.dataset_io import CategoryTable, UnifiedCategory
from panofuse.geometry import CameraIntrinsics
from panofuse.synth import SceneSpec, CategorySpec, Primitive, SynthScene


def identity_table(n: int, dim: int | None = None, **overrides) -> CategoryTable:
    """Categories embedded as basis vectors: category i -> e_i. Exact math."""
    dim = dim or n
    cats = []
    for i in range(n):
        vec = np.zeros(dim)
        vec[i] = 1.0
        cats.append(
            UnifiedCategory(
                id=i,
                name=overrides.get("names", [f"cat{i}" for i in range(n)])[i],
                kind="thing",
                size_class="Medium",
                embedding=vec,
            )
        )
    return CategoryTable(cats, embedding_dim=dim)


SMALL_INTRINSICS = CameraIntrinsics(fx=70.0, fy=70.0, cx=40.0, cy=30.0, width=80, height=60)


def couch_scene_spec(**kw) -> SceneSpec:
    defaults = dict(
        room_min=np.array([0.0, 0.0, 0.0]),
        room_max=np.array([3.0, 3.0, 3.0]),
        categories=[
            CategorySpec("couch", "thing", "Large", ("couch", "sofa")),
        ],
        primitives=[
            Primitive(
                shape="box",
                category="couch",
                center=np.array([1.5, 1.5, 0.4]),
                size=np.array([0.9, 0.6, 0.8]),
            )
        ],
        intrinsics=SMALL_INTRINSICS,
        seed=7,
        embedding_dim=16,
        room_detections=False,
    )
    defaults.update(kw)
    return SceneSpec(**defaults)


@pytest.fixture(scope="session")
def couch_scene() -> SynthScene:
    return SynthScene(couch_scene_spec())
