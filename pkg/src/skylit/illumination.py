"""Latent-conditioned spherical HDR radiance model.

A fixed bank of von Mises-Fisher lobes decodes a low-dimensional latent
Z (3 x K of per-lobe log-RGB amplitudes) into a strictly positive HDR
environment: L(d) = gamma * exp(sum_k Z[:,k] * b_k(d)) with
b_k(d) = exp(kappa_k * (axis_k . d - 1)). Z = 0 decodes to the constant
unit environment, the normal prior ||Z||^2 is meaningful because the decoder
is fixed, and arranging lobe axes in azimuthal rings makes rotation about the
vertical axis an exact latent permutation on the ring lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .geometry import rot_z, spherical_to_dir


@dataclass(frozen=True)
class LobeDecoder:
    axes: np.ndarray          # (K,3) unit lobe directions
    kappas: np.ndarray        # (K,) concentrations
    ring_indices: tuple       # tuple of index tuples, each one azimuthal ring
    latent_mean: np.ndarray   # (3,K) prior mean used when *sampling* skies

    @property
    def n_lobes(self):
        return self.axes.shape[0]

    @classmethod
    def default(cls, n_lobes=16, kappa=8.0, ring_size=7, elevation_deg=35.0,
                upper_mean_bias=0.2):
        """Two polar caps plus two azimuthal rings; K must be 2 + 2*ring_size."""
        if n_lobes != 2 + 2 * ring_size:
            raise ValueError("lobe count must equal 2 + 2 * ring_size")
        elev = np.radians(elevation_deg)
        axes = [np.array([0.0, 0.0, 1.0])]
        upper = tuple(range(1, 1 + ring_size))
        for j in range(ring_size):
            phi = 2.0 * np.pi * j / ring_size
            axes.append(spherical_to_dir(np.pi / 2 - elev, phi))
        lower = tuple(range(1 + ring_size, 1 + 2 * ring_size))
        for j in range(ring_size):
            phi = 2.0 * np.pi * j / ring_size
            axes.append(spherical_to_dir(np.pi / 2 + elev, phi))
        axes.append(np.array([0.0, 0.0, -1.0]))
        axes = np.asarray(axes)
        mean = np.zeros((3, len(axes)))
        mean[:, 0] = upper_mean_bias           # lighting-from-above prior
        mean[:, list(upper)] = upper_mean_bias
        return cls(axes=axes, kappas=np.full(len(axes), float(kappa)),
                   ring_indices=(upper, lower), latent_mean=mean)

    def basis(self, dirs):
        """b_k(d) for unit rows ``dirs``; (D,K), values in (0,1]."""
        dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
        return np.exp(self.kappas[None, :] * (dirs @ self.axes.T - 1.0))

    @property
    def ring_step(self):
        return 2.0 * np.pi / len(self.ring_indices[0])


@dataclass
class IlluminationState:
    """Per-image sky: latent Z (3,K), scale gamma (kept in log space)."""

    decoder: LobeDecoder
    Z: np.ndarray
    log_gamma: np.ndarray  # () array

    @classmethod
    def zero(cls, decoder, gamma=1.0):
        return cls(decoder=decoder, Z=np.zeros((3, decoder.n_lobes)),
                   log_gamma=np.asarray(np.log(gamma), dtype=np.float64))

    @property
    def gamma(self):
        return float(np.exp(self.log_gamma))


class IlluminationBank:
    """All per-image states stacked; single parameter slots for training."""

    def __init__(self, decoder, n_images, gamma=1.0):
        self.decoder = decoder
        self.Z = np.zeros((n_images, 3, decoder.n_lobes))
        self.log_gamma = np.full(n_images, np.log(gamma))

    @property
    def n_images(self):
        return self.Z.shape[0]

    def state(self, i):
        return IlluminationState(self.decoder, self.Z[i], self.log_gamma[i:i + 1])

    def set_state(self, i, state):
        self.Z[i] = state.Z
        self.log_gamma[i] = np.asarray(state.log_gamma).reshape(())


class BoundIllumination:
    """Per-tape binding of a bank (or a single state via a 1-image bank)."""

    def __init__(self, tape, bank, trainable=True):
        self.decoder = bank.decoder
        if trainable:
            self.Z = tape.parameter("illum_Z", bank.Z)
            self.log_gamma = tape.parameter("illum_log_gamma", bank.log_gamma)
        else:
            self.Z = tp._lift(bank.Z, None)
            self.log_gamma = tp._lift(bank.log_gamma, None)

    @classmethod
    def from_vars(cls, decoder, z_var, log_gamma_var):
        self = cls.__new__(cls)
        self.decoder = decoder
        self.Z = z_var
        self.log_gamma = log_gamma_var
        return self

    def radiance_all(self, dirs):
        """HDR radiance of every image at shared directions; (N,D,3) Var."""
        basis = self.decoder.basis(dirs)
        log_l = tp.einsum2("ick,dk->idc", self.Z, basis)
        gamma = tp.reshape(tp.exp(self.log_gamma), (-1, 1, 1))
        return gamma * tp.exp(log_l)

    def radiance_rows(self, dirs, image_idx):
        """Per-ray radiance at per-ray directions; (R,3) Var."""
        basis = self.decoder.basis(dirs)
        z_rows = tp.take_rows(self.Z, image_idx)
        log_l = tp.einsum2("rck,rk->rc", z_rows, basis)
        gamma = tp.reshape(tp.exp(tp.take_rows(self.log_gamma, image_idx)), (-1, 1))
        return gamma * tp.exp(log_l)


def radiance(state, dirs):
    """HDR RGB radiance of one state at unit directions; plain numpy (D,3)."""
    basis = state.decoder.basis(dirs)
    log_l = basis @ state.Z.T
    return float(np.exp(np.asarray(state.log_gamma).reshape(()))) * np.exp(log_l)


def prior_loss(Z):
    """Squared Frobenius norm of the latent(s); Var in, Var out."""
    if isinstance(Z, tp.Var):
        return tp.vsum(Z * Z)
    return float(np.sum(np.square(Z)))


def rotate_latent(decoder, Z, theta, tol=1e-9):
    """Rotate the environment about the vertical axis by permuting ring
    columns. Exact only for theta on the ring lattice; off-lattice angles
    return (Z, False) and the caller should rotate query directions instead.
    """
    step = decoder.ring_step
    m = theta / step
    m_round = int(np.round(m))
    if abs(m - m_round) * step > tol:
        return Z, False
    out = Z.copy()
    for ring in decoder.ring_indices:
        ring = np.asarray(ring)
        n = len(ring)
        out[:, ring[(np.arange(n) + m_round) % n]] = Z[:, ring]
    return out, True


def rotated_radiance(state, dirs, theta):
    """radiance under a theta rotation about z, exact for any theta (falls
    back to rotating the query when theta is off the ring lattice)."""
    z_rot, exact = rotate_latent(state.decoder, state.Z, theta)
    if exact:
        return radiance(IlluminationState(state.decoder, z_rot, state.log_gamma), dirs)
    q = np.atleast_2d(dirs) @ rot_z(-theta).T
    return radiance(state, q)


def export_envmap(state, width, height):
    """Equirectangular HDR map, row 0 at the zenith; width must be 2*height."""
    if width != 2 * height:
        raise ValueError("equirectangular export requires width = 2 * height")
    theta = (np.arange(height) + 0.5) / height * np.pi
    phi = (np.arange(width) + 0.5) / width * 2.0 * np.pi - np.pi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    dirs = spherical_to_dir(tt.reshape(-1), pp.reshape(-1))
    return radiance(state, dirs).reshape(height, width, 3)


def envmap_pixel_dir(row, col, width, height):
    theta = (row + 0.5) / height * np.pi
    phi = (col + 0.5) / width * 2.0 * np.pi - np.pi
    return spherical_to_dir(theta, phi)


def sample_latent(decoder, rng, scale=1.0):
    """Draw Z from the decoder's natural-illumination prior (biased mean)."""
    return decoder.latent_mean + scale * rng.normal(size=(3, decoder.n_lobes))
