import numpy as np
import pytest

from skylit import losses as ls
from skylit import train as tr
from skylit.geometry import ConfigError, rot_z
from skylit.scenes import CLASS_TRANSIENT
from tests.conftest import tiny_train_config


def ring_centers(n=12, tilt=None, rng=None):
    az = np.linspace(0, 2 * np.pi, n, endpoint=False)
    z = 0.02 * rng.normal(size=n) if rng is not None else np.zeros(n)
    pts = np.stack([0.8 * np.cos(az), 0.8 * np.sin(az), z], axis=1)
    if tilt is not None:
        pts = pts @ tilt.T
    return pts


def test_gravity_align_identity_for_flat_ring():
    rng = np.random.default_rng(0)
    rot = tr.gravity_align(ring_centers(rng=rng) * [1, 1, 0])
    assert np.abs(rot - np.eye(3)).max() < 1e-9


def test_gravity_align_recovers_tilt():
    angle = np.radians(30.0)
    tilt = np.array([
        [1, 0, 0],
        [0, np.cos(angle), -np.sin(angle)],
        [0, np.sin(angle), np.cos(angle)],
    ])
    rot = tr.gravity_align(ring_centers(tilt=tilt))
    # applying the recovered rotation flattens the ring
    flattened = ring_centers(tilt=tilt) @ rot.T
    assert np.abs(flattened[:, 2] - flattened[:, 2].mean()).max() < 1e-6
    assert np.abs(rot @ tilt @ np.array([0, 0, 1.0]) - [0, 0, 1]).max() < 1e-6


def test_gravity_align_robust_to_outlier():
    rng = np.random.default_rng(1)
    pts = ring_centers(24, rng=rng)
    clean = tr.gravity_align(pts)
    spiked = np.concatenate([pts, [[0.4, 0.1, 0.6]]])
    robust = tr.gravity_align(spiked)

    def angle_between(a, b):
        n_a = a.T @ np.array([0, 0, 1.0])
        n_b = b.T @ np.array([0, 0, 1.0])
        return np.degrees(np.arccos(np.clip(n_a @ n_b, -1, 1)))

    assert angle_between(clean, robust) < 1.0
    # the non-robust single fit is pulled well past the robust one
    c = spiked - spiked.mean(axis=0)
    _, evecs = np.linalg.eigh(c.T @ c)
    naive_tilt = np.degrees(np.arccos(abs(evecs[:, 0] @ np.array([0, 0, 1.0]))))
    assert naive_tilt > 1.0


def test_gravity_align_collinear_warns_identity():
    pts = np.stack([np.linspace(0, 1, 8), np.zeros(8), np.zeros(8)], axis=1)
    with pytest.warns(UserWarning):
        rot = tr.gravity_align(pts)
    assert np.array_equal(rot, np.eye(3))


def test_dataset_poses_roundtrip_gravity(tiny_dataset):
    # tilt the whole rig: alignment must rotate the best-fit camera plane
    # back to horizontal (normal to +z)
    _, dataset = tiny_dataset
    angle = np.radians(18.0)
    tilt = rot_z(0.3) @ np.array([
        [1, 0, 0],
        [0, np.cos(angle), -np.sin(angle)],
        [0, np.sin(angle), np.cos(angle)],
    ])
    from skylit.cameras import Camera

    tilted = [
        Camera(K=c.K.copy(),
               E=np.concatenate([c.R @ tilt.T, c.t[:, None]], axis=1),
               width=c.width, height=c.height)
        for c in dataset.cameras
    ]
    aligned, rot = tr.apply_gravity_align(tilted)
    back = np.stack([c.origin for c in aligned])
    centered = back - back.mean(axis=0)
    _, evecs = np.linalg.eigh(centered.T @ centered)
    assert abs(evecs[:, 0] @ np.array([0, 0, 1.0])) > 1.0 - 1e-8
    # camera orientations stay consistent: rays through the principal point
    # still pass through the (rotated) scene target
    d_old = tilted[0].forward_axis()
    d_new = aligned[0].forward_axis()
    assert np.allclose(rot @ d_old, d_new, atol=1e-12)


def test_sample_ray_batch_classes_and_uniformity(sphere_plane_dataset):
    _, dataset = sphere_plane_dataset
    pool = tr.build_pixel_pool(dataset)
    rng = np.random.default_rng(2)
    batch = tr.sample_ray_batch(dataset, pool, 100_000, rng)
    assert not np.any(batch.classes == CLASS_TRANSIENT)
    # class histogram matches the dataset proportions within 2%
    classes, counts = np.unique(dataset.masks, return_counts=True)
    want = counts / counts.sum()
    for cls, frac in zip(classes, want):
        got = np.mean(batch.classes == cls)
        assert abs(got - frac) < 0.02
    # rays carry unit directions and per-image origins
    assert np.allclose(np.linalg.norm(batch.dirs, axis=1), 1.0)
    i = batch.image_idx[0]
    assert np.allclose(batch.origins[0], dataset.cameras[i].origin)


def test_sample_ray_batch_all_transient_errors(tiny_dataset):
    _, dataset = tiny_dataset
    masks = dataset.masks.copy()
    try:
        dataset.masks[:] = CLASS_TRANSIENT
        with pytest.raises(ConfigError):
            tr.build_pixel_pool(dataset)
    finally:
        dataset.masks[:] = masks


def test_learning_rate_schedules():
    cfg = tr.TrainConfig(steps=2000, warmup_steps=500)
    assert tr.warmup_cosine(1e-2, 0, 2000, 500) == 0.0
    mid = tr.warmup_cosine(1e-2, 500, 2000, 500)
    assert mid == pytest.approx(1e-2 * 0.5 * (1 + np.cos(np.pi * 0.25)))
    assert tr.warmup_cosine(1e-2, 2000, 2000, 500) == pytest.approx(0.0)
    assert tr.exponential_decay(1e-2, 0, 2000) == 1e-2
    assert tr.exponential_decay(1e-2, 2000, 2000) == pytest.approx(1e-3)
    lrs = [tr.warmup_cosine(1.0, s, 1000, 100) for s in range(0, 1001, 50)]
    assert lrs[2] > lrs[1] > lrs[0]  # ramp
    assert all(a >= b for a, b in zip(lrs[2:], lrs[3:]))  # then decay


def test_adam_moves_toward_minimum():
    adam = tr.Adam()
    x = np.array([4.0])
    for _ in range(300):
        adam.update("x", x, 2.0 * x, 0.05)
    assert abs(x[0]) < 0.1
    assert np.isfinite(adam.m["x"]).all() and np.isfinite(adam.v["x"]).all()


def test_config_validation():
    with pytest.raises(ConfigError):
        tr.TrainConfig(lr_fields=0.0)
    with pytest.raises(ConfigError):
        tr.TrainConfig(steps=100, warmup_steps=100)
    with pytest.raises(ConfigError):
        tr.TrainConfig(loss_reduction="median")
    with pytest.raises(ConfigError):
        tr.TrainConfig.from_entries({"not_a_key": "1"})
    with pytest.raises(ConfigError):
        tr.TrainConfig.from_entries({"steps": "many"})
    cfg = tr.TrainConfig.from_entries(
        {"steps": "250", "warmup_steps": "50", "stop_gradient": "true",
         "lr_ddf": "2e-3"})
    assert cfg.steps == 250 and cfg.stop_gradient and cfg.lr_ddf == 2e-3
    back = tr.TrainConfig.from_entries(
        {k: str(v) for k, v in cfg.to_entries().items()})
    assert back == cfg


def test_zero_weights_leave_parameters_unchanged(tiny_dataset):
    _, dataset = tiny_dataset
    cfg = tiny_train_config(
        steps=5, weight_appearance=0.0, weight_prior=0.0, weight_sky=0.0,
        weight_ddf_depth=0.0, weight_ddf_levelset=0.0,
        weight_ddf_multiview=0.0, weight_ddf_sky=0.0,
        weight_ground_plane=0.0, weight_eps_anneal=0.0,
    )
    trainer = tr.Trainer(dataset, cfg)
    before = {
        "sdf": trainer.fields.sdf.grid.copy(),
        "alb": trainer.fields.albedo.grid.copy(),
        "ddf": trainer.ddf.grid.copy(),
        "Z": trainer.bank.Z.copy(),
        "eps": trainer.vis_params.eps_raw.copy(),
    }
    trainer.train(5)
    assert np.array_equal(trainer.fields.sdf.grid, before["sdf"])
    assert np.array_equal(trainer.fields.albedo.grid, before["alb"])
    assert np.array_equal(trainer.ddf.grid, before["ddf"])
    assert np.array_equal(trainer.bank.Z, before["Z"])
    assert np.array_equal(trainer.vis_params.eps_raw, before["eps"])


def test_training_deterministic_under_seed(tiny_dataset):
    _, dataset = tiny_dataset

    def run():
        trainer = tr.Trainer(dataset, tiny_train_config(steps=30))
        hist = trainer.train(30)
        return np.array([h["total"] for h in hist])

    a = run()
    b = run()
    assert np.array_equal(a, b)


def test_training_decreases_loss(tiny_dataset):
    _, dataset = tiny_dataset
    trainer = tr.Trainer(dataset, tiny_train_config(steps=120, warmup_steps=30))
    hist = trainer.train(120)
    first = np.mean([h["total"] for h in hist[:10]])
    last = np.mean([h["total"] for h in hist[-10:]])
    assert last < first
    assert not trainer.rejected_steps


def test_loss_csv_written(tiny_dataset, tmp_path):
    _, dataset = tiny_dataset
    log = tmp_path / "losses.csv"
    trainer = tr.Trainer(dataset, tiny_train_config(steps=4), log_path=str(log))
    trainer.train(4)
    trainer.close()
    lines = log.read_text().strip().splitlines()
    assert len(lines) == 5  # header + 4 steps
    header = lines[0].split(",")
    assert header[0] == "step" and "epsilon" in header
    assert "appearance" in header and "ddf_sky" in header


def test_nonfinite_step_rejected(tiny_dataset):
    _, dataset = tiny_dataset
    trainer = tr.Trainer(dataset, tiny_train_config(steps=3))
    trainer.bank.Z[0, 0, 0] = np.nan
    before = trainer.fields.sdf.grid.copy()
    rec = trainer.train_step()
    assert rec["rejected"]
    assert trainer.rejected_steps == [0]
    assert np.array_equal(trainer.fields.sdf.grid, before)


def test_checkpoint_roundtrip(tiny_dataset, tmp_path):
    _, dataset = tiny_dataset
    trainer = tr.Trainer(dataset, tiny_train_config(steps=6))
    trainer.train(6)
    tr.save_checkpoint(str(tmp_path / "ck"), trainer)
    loaded = tr.load_checkpoint(str(tmp_path / "ck"), dataset)
    assert np.abs(loaded.fields.sdf.grid - trainer.fields.sdf.grid).max() < 1e-6
    assert np.abs(loaded.ddf.grid - trainer.ddf.grid).max() < 1e-6
    assert np.abs(loaded.bank.Z - trainer.bank.Z).max() < 1e-6
    assert loaded.vis_params.epsilon == pytest.approx(trainer.vis_params.epsilon,
                                                      abs=1e-6)
    assert loaded.adam.t == trainer.adam.t
    assert loaded.cfg == trainer.cfg


def test_stop_gradient_flag_blocks_field_gradients(tiny_dataset):
    _, dataset = tiny_dataset

    def visibility_only_grads(stop):
        cfg = tiny_train_config(
            steps=5, stop_gradient=stop,
            weight_prior=0.0, weight_sky=0.0, weight_ddf_depth=0.0,
            weight_ddf_levelset=0.0, weight_ddf_multiview=0.0,
            weight_ddf_sky=0.0, weight_eps_anneal=0.0,
        )
        trainer = tr.Trainer(dataset, cfg)
        # make visibility informative: shrink epsilon, randomize the DDF
        rng = np.random.default_rng(3)
        trainer.ddf.grid[:] = rng.normal(size=trainer.ddf.grid.shape)
        trainer.vis_params.eps_raw = np.asarray(
            __import__("skylit.tape", fromlist=["tape"]).softplus_inverse(0.05))
        import skylit.fields as fd
        import skylit.illumination as il
        import skylit.render as rd
        import skylit.tape as tp
        import skylit.visibility as vz
        from skylit.geometry import icosphere_directions, so3_jitter

        batch = tr.sample_ray_batch(dataset, trainer.pool, 32, rng)
        tape = tp.Tape()
        bf = fd.BoundFields(tape, trainer.fields)
        bi = il.BoundIllumination(tape, trainer.bank)
        bd = vz.BoundDdf(tape, trainer.ddf, trainer.vis_params)
        out = rd.render_rays(tape, bf, bi, bd, batch.origins, batch.dirs,
                             batch.image_idx, trainer.dir_set, so3_jitter(rng),
                             rng, n_samples=16, stop_grad_vis=stop)
        loss = ls.appearance_loss(out["rgb"], batch.gt)
        return tp.backward(tape, loss)

    g_stop = visibility_only_grads(True)
    g_free = visibility_only_grads(False)
    assert np.all(g_stop["ddf_grid"] == 0.0)
    assert np.all(g_stop["vis_eps_raw"] == 0.0)
    assert np.abs(g_free["ddf_grid"]).max() > 0.0


def test_holdout_fit_recovers_gamma_scale(tiny_dataset):
    # render a view at a darker exposure; the holdout fit recovers the scale
    # (over-exposed pixels clamp to the same white and carry no scale signal,
    # so the informative direction is downward)
    _, dataset = tiny_dataset
    from skylit.illumination import IlluminationState, LobeDecoder
    from skylit.render import render_image
    import skylit.fields as fd
    import skylit.visibility as vz

    decoder = LobeDecoder.default()
    gt = dataset.gt_illumination(decoder)
    fields = fd.SceneFields.default(resolution=24)
    ddf = vz.DdfField.zero_init((8, 16), (4, 8))
    params = vz.VisibilityParams.default()
    target_state = IlluminationState(decoder, gt.Z, np.asarray(np.log(0.55)))
    img = render_image(dataset.cameras[1], fields, target_state, dir_level=1,
                       n_samples=16, seed=4)
    # scale-only perturbation: start from the unperturbed latent at scale 1
    # with the latent frozen, isolating the scale axis (a free joint refit
    # drifts along the soft Z/gamma degeneracy and splits the scale)
    start = IlluminationState(decoder, gt.Z.copy(), np.asarray(0.0))
    state, info = tr.fit_holdout_illumination(
        fields, ddf, params, decoder, dataset, 1, steps=200, dir_level=1,
        samples_per_ray=16, batch_size=192, image_override=img.rgb,
        use_visibility=False, init_state=start, freeze_latent=True,
    )
    assert not info["no_sky_pixels"]
    assert state.gamma == pytest.approx(target_state.gamma, rel=0.05)
    assert np.array_equal(state.Z, gt.Z)
