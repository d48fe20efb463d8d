"""Shared fixtures: tiny deterministic scenes and their baked assets."""

from __future__ import annotations

import numpy as np
import pytest

from voxstream import DENSITY_GAMMA, PIXEL_BUDGET
from voxstream.feature_field import FeatureImage, bake
from voxstream.mapping import build_mapping
from voxstream.occupancy import build_pyramid, plan_groups, threshold_occupancy
from voxstream.scene import preset


def image_side_for(count: int) -> int:
    side = 8
    while side * side < count:
        side += 8
    return side


def plan_scene(scene, gamma: float = DENSITY_GAMMA, theta: int = PIXEL_BUDGET):
    grids = [threshold_occupancy(scene.generate_frame(t)[0], gamma)
             for t in range(scene.num_frames)]
    return plan_groups(grids, theta)


def bake_group(scene, plan, gid: int, image_size, layout: str = "morton"):
    """Ground-truth feature images for one group, plus table and pyramid."""
    start, end, grid = plan.groups[gid]
    table = build_mapping(grid, image_size, layout=layout)
    images = {}
    for t in range(start, end + 1):
        dens, feats = scene.generate_frame(t)
        images[t] = bake(dens.values, feats.values, table, frame_index=t,
                         group_id=gid)
    return table, build_pyramid(grid), images


@pytest.fixture(scope="session")
def sphere16():
    return preset("static_sphere", resolution=16, num_frames=2)


@pytest.fixture(scope="session")
def mover16():
    return preset("moving_sphere", resolution=16, num_frames=4)


@pytest.fixture(scope="session")
def sphere16_assets(sphere16):
    plan = plan_scene(sphere16)
    side = image_side_for(max(g.occupied_count for _, _, g in plan.groups))
    table, pyramid, images = bake_group(sphere16, plan, 0, (side, side))
    return sphere16, plan, table, pyramid, images


@pytest.fixture(scope="session")
def mover16_assets(mover16):
    plan = plan_scene(mover16)
    side = image_side_for(max(g.occupied_count for _, _, g in plan.groups))
    table, pyramid, images = bake_group(mover16, plan, 0, (side, side))
    return mover16, plan, table, pyramid, images


def random_grid(rng: np.random.Generator, res=(16, 16, 16), fill=0.05):
    from voxstream.occupancy import OccupancyGrid

    return OccupancyGrid(rng.random(res) < fill)


def random_connected_grid(rng: np.random.Generator, res=(32, 32, 32),
                          walk_len: int = 400):
    """Random-walk blob: a connected occupancy set for locality tests."""
    from voxstream.occupancy import OccupancyGrid

    bits = np.zeros(res, dtype=bool)
    p = np.array([r // 2 for r in res])
    for _ in range(walk_len):
        bits[tuple(p)] = True
        step = np.zeros(3, dtype=int)
        step[rng.integers(3)] = rng.choice((-1, 1))
        p = np.clip(p + step, 0, np.array(res) - 1)
    return OccupancyGrid(bits)
