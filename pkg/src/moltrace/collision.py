"""Hard-sphere collision model: rates, partner sampling, elastic scattering.

All stochastic operations are pure given an explicit random stream, and the
compiled kernels here are the same ones the tracing engine runs, so the
Python API and the engine cannot drift apart.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import rng as _rng
from .constants import (
    BOLTZMANN_J_PER_K,
    DEFAULT_BUFFER_MASS_KG,
    DEFAULT_CROSS_SECTION_M2,
    DEFAULT_MOLECULE_MASS_KG,
)

_KB = BOLTZMANN_J_PER_K
MAX_WEIGHTED_CANDIDATES = 64  # fixed scratch size inside the compiled kernel


@dataclass(frozen=True)
class GasParams:
    """Species constants for the traced molecule / buffer gas pair."""

    cross_section_m2: float = DEFAULT_CROSS_SECTION_M2
    molecule_mass_kg: float = DEFAULT_MOLECULE_MASS_KG
    buffer_mass_kg: float = DEFAULT_BUFFER_MASS_KG

    def __post_init__(self):
        if not (self.cross_section_m2 > 0.0):
            raise ValueError(f"cross_section_m2 must be > 0, got {self.cross_section_m2}")
        if not (self.molecule_mass_kg > 0.0 and self.buffer_mass_kg > 0.0):
            raise ValueError("masses must be > 0")


@dataclass(frozen=True)
class SamplingMethod:
    """How collision-partner velocities are assigned.

    ``direct``   -- draw one partner from the local Maxwell-Boltzmann
                    distribution and use it.
    ``weighted`` -- draw `candidates` partners, then pick one with
                    probability proportional to its relative speed
                    |v_th + u - v|, favoring faster encounters.
    """

    kind: str = "direct"
    candidates: int = 10

    def __post_init__(self):
        if self.kind not in ("direct", "weighted"):
            raise ValueError(f"unknown sampling method {self.kind!r}")
        if self.candidates < 1:
            raise ValueError("candidate count must be >= 1")
        if self.kind == "weighted" and self.candidates > MAX_WEIGHTED_CANDIDATES:
            raise ValueError(f"candidate count capped at {MAX_WEIGHTED_CANDIDATES}")

    @classmethod
    def direct(cls) -> "SamplingMethod":
        return cls(kind="direct")

    @classmethod
    def weighted(cls, candidates: int = 10) -> "SamplingMethod":
        return cls(kind="weighted", candidates=candidates)

    @property
    def kernel_id(self) -> int:
        return 0 if self.kind == "direct" else 1


def mean_thermal_speed(temperature, mass_kg):
    """Mean Maxwell-Boltzmann speed sqrt(8 kB T / (pi m))."""
    return np.sqrt(8.0 * _KB * np.asarray(temperature, dtype=float) / (math.pi * mass_kg))


def collision_rate(v, u, n, T, params: GasParams):
    """Mean molecule-buffer encounter rate (1/s).

    rate = sigma * n * sqrt(|v - u|^2 + 8 kB T / (pi m_buffer)); zero exactly
    when the buffer density vanishes.  Broadcasts over leading axes of v/u.
    """
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(T <= 0.0):
        raise ValueError("temperature must be > 0")
    if np.any(n < 0.0):
        raise ValueError("number density must be >= 0")
    rel2 = np.sum((v - u) ** 2, axis=-1)
    vth2 = 8.0 * _KB * T / (math.pi * params.buffer_mass_kg)
    out = params.cross_section_m2 * n * np.sqrt(rel2 + vth2)
    return float(out) if out.ndim == 0 else out


@njit(cache=True, nogil=True, inline="always")
def _partner_direct(state, ux, uy, uz, T, m_buf):
    s = math.sqrt(_KB * T / m_buf)
    return (ux + s * _rng.normal(state),
            uy + s * _rng.normal(state),
            uz + s * _rng.normal(state))


@njit(cache=True, nogil=True)
def _partner_weighted(state, vx, vy, vz, ux, uy, uz, T, m_buf, count):
    # thermal candidates, then pick with probability ~ relative speed
    s = math.sqrt(_KB * T / m_buf)
    cand = np.empty((count, 3))
    weights = np.empty(count)
    total = 0.0
    for i in range(count):
        tx = s * _rng.normal(state)
        ty = s * _rng.normal(state)
        tz = s * _rng.normal(state)
        cand[i, 0] = tx
        cand[i, 1] = ty
        cand[i, 2] = tz
        gx = tx + ux - vx
        gy = ty + uy - vy
        gz = tz + uz - vz
        w = math.sqrt(gx * gx + gy * gy + gz * gz)
        weights[i] = w
        total += w
    pick = count - 1
    if total > 0.0:
        target = _rng.uniform(state) * total
        acc = 0.0
        for i in range(count):
            acc += weights[i]
            if target < acc:
                pick = i
                break
    else:
        pick = int(_rng.uniform(state) * count)  # all-degenerate: uniform choice
    return ux + cand[pick, 0], uy + cand[pick, 1], uz + cand[pick, 2]


@njit(cache=True, nogil=True, inline="always")
def _scatter_direction(state, vx, vy, vz, px, py, pz, m_mol, m_buf, dx, dy, dz):
    # hard-sphere elastic update with an explicit post-collision direction of
    # the relative velocity; preserves |g| and the center-of-mass velocity
    mt = m_mol + m_buf
    cx = (m_mol * vx + m_buf * px) / mt
    cy = (m_mol * vy + m_buf * py) / mt
    cz = (m_mol * vz + m_buf * pz) / mt
    gx = vx - px
    gy = vy - py
    gz = vz - pz
    g = math.sqrt(gx * gx + gy * gy + gz * gz)
    nvx = cx + (m_buf / mt) * g * dx
    nvy = cy + (m_buf / mt) * g * dy
    nvz = cz + (m_buf / mt) * g * dz
    npx = cx - (m_mol / mt) * g * dx
    npy = cy - (m_mol / mt) * g * dy
    npz = cz - (m_mol / mt) * g * dz
    return nvx, nvy, nvz, npx, npy, npz


@njit(cache=True, nogil=True, inline="always")
def _scatter(state, vx, vy, vz, px, py, pz, m_mol, m_buf):
    # isotropic scattering in the center-of-mass frame
    cz = 2.0 * _rng.uniform(state) - 1.0
    phi = 2.0 * math.pi * _rng.uniform(state)
    sz = math.sqrt(max(0.0, 1.0 - cz * cz))
    return _scatter_direction(state, vx, vy, vz, px, py, pz, m_mol, m_buf,
                              sz * math.cos(phi), sz * math.sin(phi), cz)


@njit(cache=True, nogil=True)
def _sample_partners_batch(state, out, vx, vy, vz, ux, uy, uz, T, m_buf,
                           method_id, count):
    for i in range(out.shape[0]):
        if method_id == 0:
            px, py, pz = _partner_direct(state, ux, uy, uz, T, m_buf)
        else:
            px, py, pz = _partner_weighted(state, vx, vy, vz, ux, uy, uz, T,
                                           m_buf, count)
        out[i, 0] = px
        out[i, 1] = py
        out[i, 2] = pz


@njit(cache=True, nogil=True)
def _elastic_update_batch(state, out_v, out_p, v, p, m_mol, m_buf):
    for i in range(out_v.shape[0]):
        nvx, nvy, nvz, npx, npy, npz = _scatter(
            state, v[i, 0], v[i, 1], v[i, 2], p[i, 0], p[i, 1], p[i, 2],
            m_mol, m_buf)
        out_v[i, 0] = nvx
        out_v[i, 1] = nvy
        out_v[i, 2] = nvz
        out_p[i, 0] = npx
        out_p[i, 1] = npy
        out_p[i, 2] = npz


def sample_partner(v, u, T, method: SamplingMethod, params: GasParams,
                   stream: _rng.Stream, size=None):
    """Draw collision-partner velocity/velocities for a molecule at velocity v.

    Partner velocities are u plus a thermal component whose Cartesian
    coordinates are zero-mean Gaussians of variance kB T / m_buffer.
    Returns a (3,) vector, or an (size, 3) array when `size` is given.
    """
    if T <= 0.0:
        raise ValueError("temperature must be > 0")
    v = np.asarray(v, dtype=float).reshape(3)
    u = np.asarray(u, dtype=float).reshape(3)
    n_draws = 1 if size is None else int(size)
    out = np.empty((n_draws, 3))
    _sample_partners_batch(stream.state, out, v[0], v[1], v[2], u[0], u[1], u[2],
                           float(T), params.buffer_mass_kg,
                           method.kernel_id, method.candidates)
    return out[0] if size is None else out


def elastic_update_pair(v, v_partner, params: GasParams, stream: _rng.Stream, size=None):
    """Hard-sphere elastic collision; returns (molecule, partner) velocities.

    The relative-velocity direction is redrawn uniformly on the sphere; the
    center-of-mass velocity and relative speed are preserved, so pair
    momentum and kinetic energy are conserved to rounding.
    """
    v = np.asarray(v, dtype=float)
    p = np.asarray(v_partner, dtype=float)
    single = v.ndim == 1 and size is None
    v2 = np.atleast_2d(v)
    p2 = np.atleast_2d(p)
    if v2.shape != p2.shape:
        raise ValueError("v and v_partner shapes must match")
    out_v = np.empty_like(v2)
    out_p = np.empty_like(p2)
    _elastic_update_batch(stream.state, out_v, out_p, v2, p2,
                          params.molecule_mass_kg, params.buffer_mass_kg)
    if single:
        return out_v[0], out_p[0]
    return out_v, out_p


def elastic_update(v, v_partner, params: GasParams, stream: _rng.Stream):
    """Post-collision molecule velocity (see :func:`elastic_update_pair`)."""
    return elastic_update_pair(v, v_partner, params, stream)[0]


def hard_sphere_scatter(v, v_partner, params: GasParams, direction):
    """Deterministic elastic update with an explicit scattering direction.

    `direction` is the post-collision unit vector of the relative velocity.
    Returns (molecule, partner) velocities.
    """
    v = np.asarray(v, dtype=float).reshape(3)
    p = np.asarray(v_partner, dtype=float).reshape(3)
    d = np.asarray(direction, dtype=float).reshape(3)
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        raise ValueError("scattering direction must be nonzero")
    d = d / norm
    state = _rng.seed_state(np.uint64(0), np.uint64(0))  # unused by the kernel
    res = _scatter_direction(state, v[0], v[1], v[2], p[0], p[1], p[2],
                             params.molecule_mass_kg, params.buffer_mass_kg,
                             d[0], d[1], d[2])
    return np.array(res[:3]), np.array(res[3:])


def mean_free_path_check(n, T, params: GasParams):
    """Mean free path of an entrained molecule, measured vs. textbook formula.

    Returns (lambda_measured, lambda_formula) where lambda_measured is the
    molecule's mean thermal speed divided by the v = u collision rate and
    lambda_formula = 1 / (sigma n sqrt(1 + m/m_buffer)).  Their ratio is
    sqrt((m + m_buffer)/m) exactly: about 1.6% above one for a 128 amu
    molecule in helium, and only approaching one in the heavy-molecule limit.
    """
    if n <= 0.0:
        raise ValueError("number density must be > 0")
    if T <= 0.0:
        raise ValueError("temperature must be > 0")
    v_m = float(mean_thermal_speed(T, params.molecule_mass_kg))
    rate_at_rest = collision_rate(np.zeros(3), np.zeros(3), n, T, params)
    lambda_measured = v_m / rate_at_rest
    ratio = params.molecule_mass_kg / params.buffer_mass_kg
    lambda_formula = 1.0 / (params.cross_section_m2 * n * math.sqrt(1.0 + ratio))
    return lambda_measured, lambda_formula
