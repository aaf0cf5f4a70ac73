import sys

import numpy as np

from skylit import scenes as sc
from skylit import tape as tp
from skylit import train as tr
from skylit import visibility as vz
from skylit.geometry import sample_sphere
from skylit.visibility import binary_visibility_oracle

scene = sc.make_scene("two-sphere", seed=0)


def eval_filtered(ddf, label):
    rng2 = np.random.default_rng(5)
    pts, normals = [], []
    for prim in scene.primitives:
        u = sample_sphere(rng2, 5000)
        pts.append(prim.center + (prim.radius + 2e-4) * u)
        normals.append(u)
    x = np.concatenate(pts)
    n = np.concatenate(normals)
    d = sample_sphere(rng2, len(x), min_z=0.0)
    keep = np.sum(d * n, axis=1) > 0.05  # shading-relevant directions
    x, d = x[keep], d[keep]
    vgt, _ = binary_visibility_oracle(scene, x, d)
    for eps in (0.06, 0.08, 0.1, 0.125):
        par = vz.VisibilityParams.default(epsilon=eps)
        t = tp.Tape()
        bd = vz.BoundDdf(t, ddf, par, trainable=False)
        v = (vz.soft_visibility(bd, x[:, None, :], d[:, None, :])
             .data.reshape(-1) > 0.5).astype(float)
        agree = v == vgt
        vis = vgt == 1.0
        print(f"{label} eps={eps}: agree {agree.mean():.4f} "
              f"vis {agree[vis].mean():.3f} ({vis.sum()}) "
              f"occ {agree[~vis].mean():.3f} ({(~vis).sum()})")


if __name__ == "__main__":
    which = sys.argv[1]
    if which == "h1":
        ddf = vz.DdfField.zero_init((24, 48), (12, 24))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=3000, lr=1e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=64,
                                     seed=0)
        np.savez("/tmp/ddf_h1.npz", grid=ddf.grid)
        eval_filtered(ddf, "h1 dir12x24")
    elif which == "h2":
        ddf = vz.DdfField.zero_init((24, 48), (16, 32))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=4500, lr=1.5e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=96,
                                     w_multiview=3.0, seed=0)
        np.savez("/tmp/ddf_h2.npz", grid=ddf.grid)
        eval_filtered(ddf, "h2 dir16x32 mv3")
    elif which == "h3":
        from scratch_fit import evaluate
        ddf = vz.DdfField.zero_init((24, 48), (12, 24))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, lr=1.5e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=64,
                                     w_levelset=3.0, seed=0)
        np.savez("/tmp/ddf_h3.npz", grid=ddf.grid)
        evaluate(ddf, "h3 12x24 lr1.5e-2 5k ls3")
        eval_filtered(ddf, "h3")
    elif which == "h4":
        from scratch_fit import evaluate
        ddf = vz.DdfField.chord_init((24, 48), (12, 24))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, lr=1.2e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=64,
                                     seed=0)
        np.savez("/tmp/ddf_h4.npz", grid=ddf.grid)
        evaluate(ddf, "h4 chordinit ls1")
        eval_filtered(ddf, "h4")
    elif which == "h5":
        from scratch_fit import evaluate
        ddf = vz.DdfField.chord_init((24, 48), (12, 24))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, lr=1.5e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=64,
                                     w_levelset=0.5, seed=0)
        np.savez("/tmp/ddf_h5.npz", grid=ddf.grid)
        evaluate(ddf, "h5 chordinit ls0.5")
        eval_filtered(ddf, "h5")
    elif which == "h6":
        from scratch_fit import evaluate
        ddf = vz.DdfField.zero_init((24, 48), (12, 24))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, lr=3e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=64,
                                     seed=0)
        np.savez("/tmp/ddf_h6.npz", grid=ddf.grid)
        evaluate(ddf, "h6 zero lr3e-2")
        eval_filtered(ddf, "h6")
    elif which == "h7":
        from scratch_fit import evaluate
        ddf = vz.DdfField.zero_init((24, 48), (12, 24))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, lr=4.5e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=64,
                                     seed=0)
        np.savez("/tmp/ddf_h7.npz", grid=ddf.grid)
        evaluate(ddf, "h7 zero lr4.5e-2")
        eval_filtered(ddf, "h7")
    elif which in ("i1", "i2", "i3"):
        from scratch_fit import evaluate
        w = {"i1": dict(w_levelset=0.0, w_multiview=0.0),
             "i2": dict(w_levelset=1.0, w_multiview=0.0),
             "i3": dict(w_levelset=0.0, w_multiview=1.0)}[which]
        ddf = vz.DdfField.zero_init((24, 48), (12, 24))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=2500, lr=1.5e-2,
                                     warmup=150, n_positions=24,
                                     n_directions=128, multiview_pairs=64,
                                     seed=0, **w)
        evaluate(ddf, which + " " + str(w))
    elif which in ("j1", "j2", "j3"):
        from scratch_fit import evaluate
        if which == "j1":
            ddf = vz.DdfField(np.full((24, 48, 12, 24), 1.0))
            kw = dict(lr=2e-2, w_multiview=0.25)
        elif which == "j2":
            ddf = vz.DdfField.zero_init((24, 48), (12, 24))
            kw = dict(lr=2.5e-2, w_multiview=0.25)
        else:
            ddf = vz.DdfField.chord_init((24, 48), (12, 24), scale=0.7)
            kw = dict(lr=1.5e-2, w_multiview=0.25)
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, warmup=150,
                                     n_positions=24, n_directions=128,
                                     multiview_pairs=64, seed=0, **kw)
        np.savez(f"/tmp/ddf_{which}.npz", grid=ddf.grid)
        evaluate(ddf, which)
        eval_filtered(ddf, which)
    elif which in ("k1", "k2"):
        from scratch_fit import evaluate
        if which == "k1":
            ddf = vz.DdfField(np.full((16, 32, 24, 48), 1.0))
        else:
            ddf = vz.DdfField(np.full((20, 40, 20, 40), 1.0))
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=4500, lr=2e-2,
                                     warmup=150, n_positions=32,
                                     n_directions=128, multiview_pairs=64,
                                     w_multiview=0.25, seed=0)
        np.savez(f"/tmp/ddf_{which}.npz", grid=ddf.grid)
        evaluate(ddf, which)
        eval_filtered(ddf, which)
    elif which in ("l1", "l2"):
        from scratch_fit import evaluate
        if which == "l1":
            ddf = vz.DdfField(np.full((16, 32, 24, 48), 1.0))
            kw = dict(n_positions=48, lr=1.8e-2, w_multiview=0.1)
        else:
            ddf = vz.DdfField(np.full((14, 28, 28, 56), 1.0))
            kw = dict(n_positions=64, lr=1.8e-2, w_multiview=0.1)
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, warmup=150,
                                     n_directions=128, multiview_pairs=64,
                                     seed=0, **kw)
        np.savez(f"/tmp/ddf_{which}.npz", grid=ddf.grid)
        evaluate(ddf, which)
        eval_filtered(ddf, which)
    elif which in ("n1", "n2"):
        from scratch_fit import evaluate
        import time as _t
        ddf = vz.DdfField(np.full((16, 32, 24, 48), 1.0))
        kw = (dict(n_positions=48, n_directions=128) if which == "n1"
              else dict(n_positions=64, n_directions=160))
        t0 = _t.time()
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, warmup=150,
                                     lr=1.8e-2, multiview_pairs=64,
                                     w_multiview=0.1, seed=0, **kw)
        print(f"{which} fit time: {_t.time()-t0:.0f}s")
        np.savez(f"/tmp/ddf_{which}.npz", grid=ddf.grid)
        evaluate(ddf, which)
        eval_filtered(ddf, which)
    elif which in ("o1", "o2"):
        from scratch_fit import evaluate
        import time as _t
        if which == "o1":
            ddf = vz.DdfField(np.full((16, 32, 28, 56), 1.0))
        else:
            ddf = vz.DdfField(np.full((16, 32, 24, 48), 1.0))
        t0 = _t.time()
        ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=5000, warmup=150,
                                     lr=1.8e-2, n_positions=64,
                                     n_directions=160, multiview_pairs=64,
                                     w_levelset=2.0, w_multiview=0.1, seed=0)
        print(f"{which} fit time: {_t.time()-t0:.0f}s")
        np.savez(f"/tmp/ddf_{which}.npz", grid=ddf.grid)
        evaluate(ddf, which)
        eval_filtered(ddf, which)
