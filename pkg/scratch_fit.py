import sys
import time

import numpy as np

from skylit import fields as fd
from skylit import losses as ls
from skylit import scenes as sc
from skylit import tape as tp
from skylit import train as tr
from skylit import visibility as vz
from skylit.geometry import sample_sphere
from skylit.visibility import binary_visibility_oracle

scene = sc.make_scene("two-sphere", seed=0)


def query_set(n_per=5000, seed=5):
    rng2 = np.random.default_rng(seed)
    pts = []
    for prim in scene.primitives:
        u = sample_sphere(rng2, n_per)
        pts.append(prim.center + (prim.radius + 2e-4) * u)
    x = np.concatenate(pts)
    d = sample_sphere(rng2, len(x), min_z=0.0)
    return x, d


def evaluate(ddf, label, eps=0.1):
    rng = np.random.default_rng(99)
    batch = ls.sample_ddf_batch(scene, rng, 64, 160)
    t = tp.Tape()
    bd = vz.BoundDdf(t, ddf, vz.VisibilityParams.default(), trainable=False)
    pred = vz.ddf_eval(bd, batch.flat_positions, batch.flat_directions)
    err = np.abs(pred.data - batch.flat_depths)
    hit = batch.flat_hit
    x, d = query_set()
    vgt, _ = binary_visibility_oracle(scene, x, d)
    par = vz.VisibilityParams.default(epsilon=eps)
    t = tp.Tape()
    bd = vz.BoundDdf(t, ddf, par, trainable=False)
    v = (vz.soft_visibility(bd, x[:, None, :], d[:, None, :]).data.reshape(-1)
         > 0.5).astype(float)
    agree = v == vgt
    vis = vgt == 1.0
    print(f"{label}:")
    print(f"  depth MAE {err.mean():.4f}  hit {err[hit].mean():.4f} "
          f"(p90 {np.percentile(err[hit],90):.3f})  miss {err[~hit].mean():.4f} "
          f"(p90 {np.percentile(err[~hit],90):.3f})")
    print(f"  agree {agree.mean():.3f} | visible acc {agree[vis].mean():.3f} "
          f"(n={vis.sum()}) | occluded acc {agree[~vis].mean():.3f} (n={(~vis).sum()})")
    return agree.mean()


def run(label, steps, lr, pos, dr, npos=24, init=0.0, **kw):
    ddf = vz.DdfField(np.full(tuple(pos) + tuple(dr), float(init)))
    t0 = time.time()
    ddf, _ = tr.fit_ddf_to_scene(scene, ddf=ddf, steps=steps, lr=lr, warmup=150,
                                 n_positions=npos, n_directions=128,
                                 multiview_pairs=64, seed=0, **kw)
    print(f"{label}: {time.time()-t0:.0f}s")
    evaluate(ddf, label)
    return ddf


if __name__ == "__main__":
    which = sys.argv[1]
    if which == "g1":
        run("g1 dir12x24 lr1e-2 3k", 3000, 1e-2, (24, 48), (12, 24))
    elif which == "g2":
        run("g2 dir12x24 levelset x3", 3000, 1e-2, (24, 48), (12, 24),
            w_levelset=3.0)
    elif which == "g3":
        run("g3 dir24x48 lr2e-2 4.5k", 4500, 2e-2, (16, 32), (24, 48))
    elif which == "g4":
        run("g4 dir16x32 lr1.5e-2 4.5k npos32", 4500, 1.5e-2, (24, 48), (16, 32),
            npos=32)
