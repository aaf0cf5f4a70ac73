"""Every loss term as a pure differentiable function of batch data and fields.

All terms are sums over their batch (the trainer normalizes per entry when
composing the weighted total) and are zero exactly at their documented fixed
points.
"""

from __future__ import annotations

from dataclasses import dataclass, fields as dc_fields

import numpy as np

from . import tape as tp
from .fields import sdf_eval, sphere_trace
from .geometry import SRGB_LINEAR_KNEE, sample_sphere, vmf_sample_batch
from .visibility import ddf_eval


@dataclass
class LossWeights:
    """Non-negative multiplier per term. ground_plane is optional (default
    off); eps_anneal is the pull-to-zero regularizer that anneals the
    visibility threshold (see the config notes)."""

    appearance: float = 1.0
    prior: float = 1.0
    sky: float = 1.0
    ddf_depth: float = 1.0
    ddf_levelset: float = 1.0
    ddf_multiview: float = 1.0
    ddf_sky: float = 1.0
    ground_plane: float = 0.0
    eps_anneal: float = 0.05

    def __post_init__(self):
        for f in dc_fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be >= 0")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


def tonemap(linear):
    """Differentiable sRGB transfer with a straight-through [0,1] clamp.

    Values match `geometry.srgb` exactly; the clamp passes its gradient
    through so over-exposed predictions keep a restoring force toward any
    darker ground truth (a hard clamp would silence them forever: at
    initialization the composited render exceeds 1 almost everywhere).
    """
    x = tp.clip01_straight_through(linear)
    lo = 12.92 * x
    hi = 1.055 * tp.power(tp.maximum(x, 1e-6), 1.0 / 2.4) - 0.055
    return tp.where(x.data <= SRGB_LINEAR_KNEE, lo, hi)


def color_error(pred_srgb, gt_srgb):
    """Per-ray L1 plus cosine (hue) error, summed over the batch."""
    gt = np.asarray(gt_srgb, dtype=np.float64)
    diff = tp.absolute(pred_srgb - gt)
    l1 = tp.vsum(diff)
    pred_norm = tp.norm_last(pred_srgb)
    gt_norm = np.linalg.norm(gt, axis=-1)
    degenerate = (pred_norm.data < 1e-6) | (gt_norm < 1e-6)
    denom = tp.maximum(pred_norm * gt_norm, 1e-12)
    cos_sim = tp.vsum(pred_srgb * gt, axis=-1) / denom
    cos_term = tp.where(degenerate, np.zeros(cos_sim.data.shape), 1.0 - cos_sim)
    return l1 + tp.vsum(cos_term)


def appearance_loss(pred_linear, gt_srgb):
    """Tonemapped L1 + cosine appearance error, summed over rays."""
    return color_error(tonemap(pred_linear), gt_srgb)


def sky_loss(sky_linear, gt_srgb, accumulated_weight):
    """Sky-pixel color error plus binary cross entropy on accumulated density.

    ``sky_linear`` is the illumination radiance along each sky ray (linear
    HDR); the color error reuses the appearance error on its tonemapped
    value. The BCE term is -log(1 - W) with W clamped below 1.
    """
    color = color_error(tonemap(sky_linear), gt_srgb)
    w = tp.minimum(tp.maximum(accumulated_weight, 0.0), 1.0 - 1e-6)
    bce = -tp.vsum(tp.log(1.0 - w))
    return color + bce


@dataclass
class DdfBatch:
    """Supervision samples for the DDF: sphere positions, inward sky-side
    directions per position, pseudo-ground-truth depths, and the hit mask
    (rays that left the scene carry the full chord as depth; the surface
    losses only apply where a surface actually exists)."""

    positions: np.ndarray   # (P,3) unit
    directions: np.ndarray  # (P,Q,3) unit, inward, d_z <= 0
    depths: np.ndarray      # (P,Q) in (0,2]
    hit: np.ndarray = None  # (P,Q) bool

    @property
    def flat_positions(self):
        q = self.directions.shape[1]
        return np.repeat(self.positions, q, axis=0)

    @property
    def flat_directions(self):
        return self.directions.reshape(-1, 3)

    @property
    def flat_depths(self):
        return self.depths.reshape(-1)

    @property
    def flat_hit(self):
        if self.hit is None:
            return np.ones(self.depths.size, dtype=bool)
        return self.hit.reshape(-1)


def sample_ddf_batch(sdf_like, rng, n_positions=8, n_directions=128,
                     kappa=20.0, min_z=0.0, max_steps=192):
    """Draw the paper-style DDF batch: positions uniform on the upper
    hemisphere, directions vMF-concentrated toward the scene center,
    rejected to inward and sky-side, with sphere-traced depths."""
    positions = sample_sphere(rng, n_positions, min_z=min_z)
    dirs = np.zeros((n_positions, n_directions, 3))
    filled = np.zeros(n_positions, dtype=np.int64)
    while np.any(filled < n_directions):
        cand = vmf_sample_batch(-positions, kappa, n_directions, rng)
        ok = (np.einsum("pqc,pc->pq", cand, positions) < -1e-6) \
            & (cand[..., 2] <= 0.0)
        for i in np.flatnonzero(filled < n_directions):
            good = cand[i][ok[i]][: n_directions - filled[i]]
            dirs[i, filled[i]:filled[i] + len(good)] = good
            filled[i] += len(good)
    batch = DdfBatch(positions=positions, directions=dirs,
                     depths=np.zeros((n_positions, n_directions)))
    batch.depths, batch.hit = trace_depths(sdf_like, batch, max_steps=max_steps)
    return batch


def trace_depths(sdf_like, batch, max_steps=192):
    """Sphere-traced pseudo-ground-truth (depths, hit) for a batch; rays that
    miss get the full chord to the sphere exit so depths stay in (0,2]."""
    res = sphere_trace(sdf_like, batch.flat_positions, batch.flat_directions,
                       max_steps=max_steps)
    depths = np.clip(res.t, 1e-4, 2.0).reshape(batch.depths.shape)
    return depths, res.hit.reshape(batch.depths.shape)


def ddf_depth_loss(batch, bound_ddf):
    """Sum of |traced depth - predicted depth| over the batch."""
    pred = ddf_eval(bound_ddf, batch.flat_positions, batch.flat_directions)
    return tp.vsum(tp.absolute(batch.flat_depths - pred))


def ddf_levelset_loss(batch, bound_ddf, bound_fields, to_sdf=True):
    """Walking the predicted depth must land on the SDF zero level set.

    Only rays with an actual surface along them participate (a miss ray has
    no zero crossing, so the term's fixed point would be unsatisfiable).
    Gradients reach both fields in end-to-end mode; ``to_sdf=False`` detaches
    the SDF grid (landing-point gradients still train the DDF).
    """
    keep = batch.flat_hit
    if not np.any(keep):
        return tp._lift(np.asarray(0.0), None)
    s = batch.flat_positions[keep]
    d = batch.flat_directions[keep]
    pred = ddf_eval(bound_ddf, s, d)
    land = tp._lift(s, None) + tp.reshape(pred, (-1, 1)) * d
    grid = bound_fields.sdf_grid if to_sdf else tp.stop_gradient(bound_fields.sdf_grid)
    shim = _GridShim(grid, bound_fields)
    f = sdf_eval(shim, land)
    return tp.vsum(f * f)


class _GridShim:
    """BoundFields stand-in with a substituted (possibly detached) SDF grid."""

    def __init__(self, grid, bound_fields):
        self.sdf_grid = grid
        self.fields = bound_fields.fields


def ddf_multiview_loss(pairs, bound_ddf):
    """Hinge^2 on occlusion consistency: from s2, the predicted depth toward
    a DDF termination point x1 may not exceed the true distance.

    ``pairs`` is (s1 (M,3), d1 (M,3), s2 (M,3)). Pairs with a near-zero
    baseline or with d2 pointing outward at s2 are skipped.
    """
    s1, d1, s2 = pairs
    f1 = ddf_eval(bound_ddf, s1, d1)
    x1 = tp._lift(s1, None) + tp.reshape(f1, (-1, 1)) * d1
    delta = x1 - s2
    dist = tp.norm_last(delta)
    valid = dist.data > 1e-6
    d2 = delta / tp.reshape(tp.maximum(dist, 1e-12), (-1, 1))
    inward = np.sum(d2.data * s2, axis=-1) < -1e-6
    valid = valid & inward
    if not np.any(valid):
        return tp._lift(np.asarray(0.0), None) + 0.0 * tp.vsum(f1)
    f2 = ddf_eval(bound_ddf, s2, d2, strict=False)
    hinge = tp.maximum(f2 - dist, 0.0)
    hinge = tp.where(valid, hinge, np.zeros(hinge.data.shape))
    return tp.vsum(hinge * hinge)


def sample_multiview_pairs(sdf_like, rng, n_pairs=128, kappa=20.0,
                           min_z=0.0, max_tries=8):
    """(s1, d1, s2) triples; s1 upper hemisphere with vMF directions like the
    depth batch, restricted to rays that hit the scene (a miss termination
    point is empty space and would assert a false occlusion bound); s2
    uniform over the whole sphere."""
    kept_s1, kept_d1 = [], []
    need = n_pairs
    for _ in range(max_tries):
        if need <= 0:
            break
        s1 = sample_sphere(rng, 2 * need, min_z=min_z)
        cand = vmf_sample_batch(-s1, kappa, 8, rng)
        ok = (np.einsum("pqc,pc->pq", cand, s1) < -1e-6) & (cand[..., 2] <= 0.0)
        valid_row = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        d1 = cand[np.arange(len(s1)), first]
        s1, d1 = s1[valid_row], d1[valid_row]
        res = sphere_trace(sdf_like, s1, d1)
        hit = res.hit
        kept_s1.append(s1[hit][:need])
        kept_d1.append(d1[hit][:need])
        need -= len(kept_s1[-1])
    s1 = np.concatenate(kept_s1, axis=0)
    d1 = np.concatenate(kept_d1, axis=0)
    s2 = sample_sphere(rng, len(s1))
    return s1, d1, s2


def ddf_sky_loss(origins, ray_dirs, bound_ddf):
    """Sky rays see no occluder before the sphere, so the DDF looking back
    along them must predict at least the distance to the camera origin.

    Cameras outside the unit sphere are substituted by the ray's entry point
    (flagged); rays that miss the sphere entirely are skipped.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    r = np.atleast_2d(np.asarray(ray_dirs, dtype=np.float64))
    b = 2.0 * np.sum(o * r, axis=-1)
    c = np.sum(o * o, axis=-1) - 1.0
    disc = b * b - 4.0 * c
    outside = c > 1e-12
    miss = outside & (disc <= 0.0)
    root = np.sqrt(np.maximum(disc, 0.0))
    t_entry = np.where(outside, (-b - root) / 2.0, 0.0)
    t_exit = (-b + root) / 2.0
    keep = ~miss & (t_exit > 1e-9) & (t_entry >= 0.0)
    flagged = outside & keep
    if not np.any(keep):
        return tp._lift(np.asarray(0.0), None), flagged
    s = o[keep] + t_exit[keep, None] * r[keep]
    dist = t_exit[keep] - t_entry[keep]
    pred = ddf_eval(bound_ddf, s, -r[keep], strict=False)
    return tp.vsum(tp.maximum(dist - pred, 0.0)), flagged


def ground_plane_loss(weighted_normals):
    """MonoSDF-style consistency of volume-rendered normals with world-up:
    sum of ||N - w||_1 + ||1 - N.w||_1 over ground rays; degenerate rays
    (unnormalizable N) are skipped."""
    raw = weighted_normals
    norm = np.linalg.norm(raw.data, axis=-1)
    valid = norm > 1e-6
    n = raw / tp.reshape(tp.maximum(tp.norm_last(raw), 1e-12), (-1, 1))
    up = np.array([0.0, 0.0, 1.0])
    l1 = tp.vsum(tp.absolute(n - up), axis=-1)
    align = tp.absolute(1.0 - tp.vsum(n * up, axis=-1))
    per_ray = tp.where(valid, l1 + align, np.zeros(l1.data.shape))
    return tp.vsum(per_ray)


def eps_anneal_loss(epsilon):
    """Pull-to-zero on the visibility threshold; the appearance loss brakes
    it once the sigmoid unsaturates, giving the gradual occlusion schedule."""
    return epsilon * epsilon
