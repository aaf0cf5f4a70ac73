"""Learnable SDF and albedo grid fields with NeuS-style volume rendering.

Both fields are dense trilinear grids over the cube [-extent, extent]^3
covering the contracted unit ball. Queries outside the cube are clamped to
the boundary (callers can ask for the clamp mask). The SDF carries a single
global steepness parameter for the logistic CDF used by the NeuS weight
construction, stored in log space so it stays positive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .geometry import WORLD_UP, contract, ray_sphere_exit


def _grid_coords(x, resolution, extent):
    """Map points to grid space: base corner indices, fractions, clamp mask."""
    x = np.asarray(x, dtype=np.float64)
    scale = (resolution - 1) / (2.0 * extent)
    u = (x + extent) * scale
    outside = np.any((u < 0.0) | (u > resolution - 1), axis=-1)
    u = np.clip(u, 0.0, resolution - 1)
    i0 = np.minimum(u.astype(np.int64), resolution - 2)
    return u, i0, outside, scale


def _corner_flat(i0, resolution, corner):
    dx, dy, dz = corner
    return ((i0[..., 0] + dx) * resolution + (i0[..., 1] + dy)) * resolution + (
        i0[..., 2] + dz
    )


_CORNERS = [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]


def trilinear(grid, x, resolution, extent, return_outside=False):
    """Trilinear interpolation of a Var grid at points ``x``.

    ``grid`` is (R,R,R) or (R,R,R,C); ``x`` may be numpy (N,3) or a Var (N,3)
    in which case the output is differentiable in the query positions too.
    """
    x_np = x.data if isinstance(x, tp.Var) else np.asarray(x, dtype=np.float64)
    u_np, i0, outside, scale = _grid_coords(x_np, resolution, extent)
    channels = grid.data.ndim == 4
    flat = (
        tp.reshape(grid, (resolution**3, grid.data.shape[-1]))
        if channels
        else grid
    )

    if isinstance(x, tp.Var):
        u = tp.minimum(tp.maximum((x + extent) * scale, 0.0), float(resolution - 1))
        frac = u - i0.astype(np.float64)
        fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    else:
        f_np = u_np - i0
        fx, fy, fz = (tp._lift(f_np[..., k], None) for k in range(3))

    one = 1.0
    wx = (one - fx, fx)
    wy = (one - fy, fy)
    wz = (one - fz, fz)

    idx = np.stack(
        [_corner_flat(i0, resolution, corner) for corner in _CORNERS], axis=-1
    )
    weights = tp.stack_last(
        [wx[a] * wy[b] * wz[c] for a, b, c in _CORNERS]
    )
    if channels:
        vals = tp.take_rows(flat, idx)  # (N,8,3)
        out = tp.vsum(tp.reshape(weights, weights.data.shape + (1,)) * vals,
                      axis=-2)
    else:
        out = tp.vsum(weights * tp.take(grid, idx), axis=-1)
    if return_outside:
        return out, outside
    return out


def trilinear_spatial_grad(grid, x_np, resolution, extent):
    """Analytic gradient of the interpolant w.r.t. position; (N,3) Var.

    Positions are plain numpy (the gradient is differentiable in the grid
    values, which is what the losses need).
    """
    u_np, i0, _, scale = _grid_coords(x_np, resolution, extent)
    f_np = u_np - i0
    w = [(1.0 - f_np[..., k], f_np[..., k]) for k in range(3)]
    idx = np.stack(
        [_corner_flat(i0, resolution, corner) for corner in _CORNERS], axis=-1
    )
    vals = tp.take(grid, idx)  # (N,8)
    comps = []
    for axis in range(3):
        coef = np.stack(
            [
                (1.0 if corner[axis] else -1.0)
                * np.prod([w[a][corner[a]] for a in range(3) if a != axis], axis=0)
                * scale
                for corner in _CORNERS
            ],
            axis=-1,
        )
        comps.append(tp.vsum(vals * coef, axis=-1))
    return tp.stack_last(comps)


class SdfField:
    """Dense signed-distance grid plus the learnable logistic steepness."""

    def __init__(self, grid, extent=1.0, inv_s=20.0):
        self.grid = np.asarray(grid, dtype=np.float64)
        self.resolution = self.grid.shape[0]
        self.extent = float(extent)
        self.log_inv_s = np.asarray(np.log(inv_s), dtype=np.float64)

    @classmethod
    def sphere_init(cls, resolution=64, extent=1.0, radius=0.1, inv_s=20.0):
        axis = np.linspace(-extent, extent, resolution)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        grid = np.sqrt(gx * gx + gy * gy + gz * gz) - radius
        return cls(grid, extent=extent, inv_s=inv_s)

    @classmethod
    def from_function(cls, fn, resolution=64, extent=1.0, inv_s=20.0):
        axis = np.linspace(-extent, extent, resolution)
        gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
        return cls(fn(pts).reshape(resolution, resolution, resolution),
                   extent=extent, inv_s=inv_s)

    def sdf_np(self, pts):
        """Plain-numpy trilinear evaluation (sphere tracing, oracles)."""
        pts = contract(pts)
        u, i0, _, _ = _grid_coords(pts, self.resolution, self.extent)
        f = u - i0
        flat = self.grid.reshape(-1)
        out = np.zeros(pts.shape[:-1])
        for corner in _CORNERS:
            idx = _corner_flat(i0, self.resolution, corner)
            w = np.ones_like(out)
            for a in range(3):
                w = w * (f[..., a] if corner[a] else 1.0 - f[..., a])
            out += w * flat[idx]
        return out


class AlbedoField:
    """RGB grid whose raw values map through a sigmoid to [0,1]^3."""

    def __init__(self, grid, extent=1.0):
        self.grid = np.asarray(grid, dtype=np.float64)
        self.resolution = self.grid.shape[0]
        self.extent = float(extent)

    @classmethod
    def constant_init(cls, resolution=64, extent=1.0, value=0.0):
        return cls(np.full((resolution, resolution, resolution, 3), float(value)),
                   extent=extent)


@dataclass
class SceneFields:
    sdf: SdfField
    albedo: AlbedoField

    @classmethod
    def default(cls, resolution=64, extent=1.0):
        return cls(sdf=SdfField.sphere_init(resolution, extent),
                   albedo=AlbedoField.constant_init(resolution, extent))


class BoundFields:
    """Per-tape binding of the scene fields.

    When trainable, the grids become named parameter slots on the tape;
    otherwise they are constants (used by the holdout illumination fit, which
    must see exactly-zero field gradients).
    """

    def __init__(self, tape, fields, trainable=True):
        self.fields = fields
        if trainable:
            self.sdf_grid = tape.parameter("sdf_grid", fields.sdf.grid)
            self.log_inv_s = tape.parameter("sdf_log_inv_s", fields.sdf.log_inv_s)
            self.albedo_grid = tape.parameter("albedo_grid", fields.albedo.grid)
        else:
            self.sdf_grid = tp._lift(fields.sdf.grid, None)
            self.log_inv_s = tp._lift(fields.sdf.log_inv_s, None)
            self.albedo_grid = tp._lift(fields.albedo.grid, None)

    @classmethod
    def from_vars(cls, fields, sdf_grid, log_inv_s, albedo_grid):
        """Bind explicit Vars (gradient checks drive parameters directly)."""
        self = cls.__new__(cls)
        self.fields = fields
        self.sdf_grid = sdf_grid
        self.log_inv_s = log_inv_s
        self.albedo_grid = albedo_grid
        return self

    def inv_s(self):
        return tp.exp(self.log_inv_s)


def sdf_eval(bound, x, return_outside=False):
    """Interpolated signed distance at ``x`` (numpy or Var); points beyond the
    unit ball are contracted first, then clamped to the grid with a flag."""
    if not isinstance(x, tp.Var):
        x = contract(x)
    f = bound.fields.sdf
    return trilinear(bound.sdf_grid, x, f.resolution, f.extent,
                     return_outside=return_outside)


def sdf_normals(bound, x_np):
    """Unit normals from the analytic interpolant gradient; returns the
    normals Var plus a mask of degenerate (vanishing-gradient) queries that
    fell back to world-up."""
    f = bound.fields.sdf
    g = trilinear_spatial_grad(bound.sdf_grid, contract(x_np), f.resolution, f.extent)
    norm = np.linalg.norm(g.data, axis=-1)
    degen = norm < 1e-8
    n = g / tp.reshape(tp.maximum(tp.norm_last(g), 1e-12), (-1, 1))
    if np.any(degen):
        n = tp.where(degen[:, None], np.broadcast_to(WORLD_UP, n.data.shape), n)
    return n, degen


def albedo_eval(bound, x):
    f = bound.fields.albedo
    if not isinstance(x, tp.Var):
        x = contract(x)
    raw = trilinear(bound.albedo_grid, x, f.resolution, f.extent)
    return tp.sigmoid(raw)


def neus_weights(sdf_along_ray, inv_s):
    """NeuS alpha compositing weights from SDF samples along rays.

    ``sdf_along_ray`` is a (rays, samples) Var at strictly increasing sample
    distances; the last sample's alpha is 0. Weights are nonnegative and sum
    to at most 1.
    """
    phi = tp.sigmoid(sdf_along_ray * inv_s)
    phi_cur = phi[:, :-1]
    phi_next = phi[:, 1:]
    alpha = tp.maximum((phi_cur - phi_next) / tp.maximum(phi_cur, 1e-7), 0.0)
    zeros = np.zeros((sdf_along_ray.data.shape[0], 1))
    alpha = tp.concat([alpha, tp._lift(zeros, None)], axis=1)
    trans = tp.exclusive_cumprod_last(1.0 - alpha)
    return alpha * trans


def expected_depth(weights, t, far):
    """Weight-averaged termination depth; rays with ~zero accumulated weight
    report the far bound (documented miss case)."""
    w_sum = tp.vsum(weights, axis=-1)
    t_e = tp.vsum(weights * t, axis=-1) / tp.maximum(w_sum, 1e-6)
    miss = w_sum.data < 1e-6
    if np.any(miss):
        t_e = tp.where(miss, np.broadcast_to(far, t_e.data.shape), t_e)
    return t_e, w_sum


@dataclass
class RaySamples:
    """Stratified samples along a ray batch (Eq.-level bookkeeping)."""

    origins: np.ndarray      # (R,3)
    directions: np.ndarray   # (R,3) unit
    t: np.ndarray            # (R,S) strictly increasing
    far: np.ndarray          # (R,)
    weights: object = None   # Var (R,S) once computed

    @property
    def positions(self):
        return self.origins[:, None, :] + self.t[..., None] * self.directions[:, None, :]


def stratified_samples(origins, directions, n_samples, rng, near=0.02, margin=0.0):
    """Jittered uniform bins from near to each ray's unit-sphere exit."""
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    _, far = ray_sphere_exit(origins, directions, 1.0)
    far = np.maximum(far + margin, near + 1e-3)
    edges = np.linspace(0.0, 1.0, n_samples + 1)
    lo = near + (far[:, None] - near) * edges[:-1]
    hi = near + (far[:, None] - near) * edges[1:]
    u = rng.random((origins.shape[0], n_samples))
    t = lo + (hi - lo) * u
    return RaySamples(origins=origins, directions=directions, t=t, far=far)


@dataclass
class TraceResult:
    hit: np.ndarray        # (N,) bool
    t: np.ndarray          # (N,) distance at hit (or last position)
    converged: np.ndarray  # (N,) False only when max_steps ran out mid-trace


def sphere_trace(sdf_like, origins, dirs, max_steps=128, threshold=1e-4, bound=1.0):
    """Classic sphere tracing against anything exposing ``sdf_np(points)``.

    Serves as the non-differentiable visibility/depth oracle. Rays that leave
    the bound report no-hit with t at the exit distance.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    d = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = o.shape[0]
    b = 2.0 * np.sum(o * d, axis=-1)
    c = np.sum(o * o, axis=-1) - bound * bound
    disc = np.maximum(b * b - 4.0 * c, 0.0)
    t_exit = np.maximum((-b + np.sqrt(disc)) / 2.0, 0.0)

    t = np.zeros(n)
    active = np.ones(n, dtype=bool)
    hit = np.zeros(n, dtype=bool)
    for _ in range(max_steps):
        if not np.any(active):
            break
        pts = o[active] + t[active, None] * d[active]
        f = sdf_like.sdf_np(pts)
        idx = np.flatnonzero(active)
        newly_hit = f < threshold
        hit[idx[newly_hit]] = True
        active[idx[newly_hit]] = False
        adv = idx[~newly_hit]
        t[adv] += f[~newly_hit]
        escaped = t[adv] > t_exit[adv] + threshold
        if np.any(escaped):
            t[adv[escaped]] = t_exit[adv[escaped]]
            active[adv[escaped]] = False
    converged = ~active
    t[active] = t_exit[active]
    return TraceResult(hit=hit, t=t, converged=converged)
