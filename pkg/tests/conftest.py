import numpy as np
import pytest

from cover import (GridConfig, RoomSpec, build_bvh, discretize_surface,
                   filter_all, gen_candidates, gen_room_scene)


@pytest.fixture(scope="session")
def empty_room():
    mesh = gen_room_scene(RoomSpec(4.0, 4.0, 2.5), 0)
    return mesh, build_bvh(mesh)


@pytest.fixture(scope="session")
def cluttered_room():
    mesh = gen_room_scene(RoomSpec(5.0, 4.0, 2.7, n_random_furniture=4), 1)
    return mesh, build_bvh(mesh)


@pytest.fixture(scope="session")
def cluttered_pool(cluttered_room):
    mesh, bvh = cluttered_room
    positions = gen_candidates(mesh.aabb, GridConfig())
    return filter_all(bvh, positions, ceiling_m=float(mesh.aabb.size[1]))


@pytest.fixture(scope="session")
def cluttered_elements(cluttered_room):
    mesh, _ = cluttered_room
    return discretize_surface(mesh, 0.3, 0)


def subsample_pool(cands, n, rng_seed=0):
    """A reindexed candidate set of <= n feasible candidates (ids 0..n-1)."""
    import dataclasses

    from cover import CandidateSet

    rng = np.random.default_rng(rng_seed)
    feas = cands.feasible
    pick = sorted(rng.choice(len(feas), size=min(n, len(feas)), replace=False))
    chosen = [feas[i] for i in pick]
    return CandidateSet([dataclasses.replace(c, id=i)
                         for i, c in enumerate(chosen)])
