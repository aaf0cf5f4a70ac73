"""Shared fixtures: synthetic datasets and the fitted/trained models that the
oracle-equivalence tests and the acceptance suite reuse.

The expensive session fixtures (DDF oracle fit, full training runs) are
computed once per session; tests that need them share the same artifacts.
"""

import numpy as np
import pytest

from skylit import losses as ls
from skylit import train as tr
from skylit import visibility as vz
from skylit.scenes import generate_dataset, make_scene


@pytest.fixture(scope="session")
def two_sphere_scene():
    return make_scene("two-sphere", seed=0)


@pytest.fixture(scope="session")
def fitted_two_sphere_ddf(two_sphere_scene):
    """DDF fitted to the frozen analytic two-sphere scene with the three
    consistency losses (depth + levelset + multiview)."""
    ddf = vz.DdfField.zero_init((24, 48), (12, 24))
    ddf, _ = tr.fit_ddf_to_scene(
        two_sphere_scene, ddf=ddf, steps=5000, lr=1.5e-2, warmup=150,
        n_positions=24, n_directions=128, multiview_pairs=64,
        w_levelset=3.0, seed=0,
    )
    return ddf


@pytest.fixture(scope="session")
def sphere_plane_dataset(tmp_path_factory):
    scene = make_scene("sphere-plane", seed=0)
    out = tmp_path_factory.mktemp("data") / "sphere-plane"
    return scene, generate_dataset(scene, 20, seed=11, out_dir=str(out),
                                   width=64, height=48, quad_level=3)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    scene = make_scene("sphere-plane", seed=0)
    out = tmp_path_factory.mktemp("data") / "tiny"
    return scene, generate_dataset(scene, 6, seed=3, out_dir=str(out),
                                   width=40, height=30, quad_level=2)


def tiny_train_config(**overrides):
    base = dict(
        steps=60, rays_per_batch=64, samples_per_ray=20, dir_level=1,
        sdf_resolution=20, ddf_pos_res_theta=10, ddf_pos_res_phi=20,
        ddf_dir_res_theta=8, ddf_dir_res_phi=12, warmup_steps=20,
        ddf_refresh_every=20, ddf_directions=32, ddf_multiview_pairs=16,
        seed=0,
    )
    base.update(overrides)
    base["warmup_steps"] = min(base["warmup_steps"], max(base["steps"] // 3, 1))
    return tr.TrainConfig(**base)


@pytest.fixture()
def tiny_trainer(tiny_dataset):
    _, dataset = tiny_dataset
    return tr.Trainer(dataset, tiny_train_config())
