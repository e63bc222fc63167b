"""Compiled kernels for molecule initialization and trajectory propagation.

One kernel call traces one molecule start-to-finish on its own random
stream; the Python layer in tracer.py owns acceptance, classification and
bookkeeping.  Stepping convention: the time step is set from the collision
rate at the pre-move voxel, the molecule moves, the boundary is checked,
and only then a collision may occur (partner statistics taken from the
post-move voxel).  The per-step collision probability is rate * dt, which
equals the configured collision probability whenever the dt = p/rate rule
is unclamped and vanishes in vacuum.
"""

import math

import numpy as np
from numba import njit

from . import rng as _rng
from .collision import _partner_direct, _partner_weighted, _scatter
from .constants import BOLTZMANN_J_PER_K as _KB

# trajectory/step status codes
INSIDE = 0
LEFT_VOLUME = 1
CAP_REACHED = 2
ABORTED = 3


@njit(cache=True, nogil=True)
def _init_molecule(state, pos, vel, src_center, src_e1, src_e2, src_normal,
                   src_radius, source_temp, m_mol):
    # position: uniform over the source disc
    radius = src_radius * math.sqrt(_rng.uniform(state))
    psi = 2.0 * math.pi * _rng.uniform(state)
    ca, sa = math.cos(psi), math.sin(psi)
    for i in range(3):
        pos[i] = src_center[i] + radius * (ca * src_e1[i] + sa * src_e2[i])
    # speed: Maxwell-Boltzmann at the source temperature
    a = math.sqrt(_KB * source_temp / m_mol)
    n1 = _rng.normal(state)
    n2 = _rng.normal(state)
    n3 = _rng.normal(state)
    speed = a * math.sqrt(n1 * n1 + n2 * n2 + n3 * n3)
    # direction: cos^2 weighted about the disc normal, into the cell
    cos_polar = _rng.uniform_open(state) ** (1.0 / 3.0)
    sin_polar = math.sqrt(max(0.0, 1.0 - cos_polar * cos_polar))
    alpha = 2.0 * math.pi * _rng.uniform(state)
    cb, sb = math.cos(alpha), math.sin(alpha)
    for i in range(3):
        vel[i] = speed * (cos_polar * src_normal[i]
                          + sin_polar * (cb * src_e1[i] + sb * src_e2[i]))


@njit(cache=True, nogil=True)
def _init_batch(state, positions, velocities, src_center, src_e1, src_e2,
                src_normal, src_radius, source_temp, m_mol):
    pos = np.empty(3)
    vel = np.empty(3)
    for i in range(positions.shape[0]):
        _init_molecule(state, pos, vel, src_center, src_e1, src_e2,
                       src_normal, src_radius, source_temp, m_mol)
        for j in range(3):
            positions[i, j] = pos[j]
            velocities[i, j] = vel[j]


@njit(cache=True, nogil=True, inline="always")
def _voxel_of(x, y, z, origin, inv_delta, nx, ny, nz):
    i = int(math.floor((x - origin[0]) * inv_delta))
    j = int(math.floor((y - origin[1]) * inv_delta))
    k = int(math.floor((z - origin[2]) * inv_delta))
    ok = 0 <= i < nx and 0 <= j < ny and 0 <= k < nz
    return i, j, k, ok


@njit(cache=True, nogil=True)
def _step(state, pos, vel, t, n_coll,
          origin, inv_delta, nx, ny, nz, velocity, density, temperature, occupied,
          sigma, m_mol, m_buf, method_id, n_cand, p_coll, dt_max, delta):
    """Advance one step in place; returns (status, t, n_coll)."""
    i, j, k, ok = _voxel_of(pos[0], pos[1], pos[2], origin, inv_delta, nx, ny, nz)
    if not ok or not occupied[i, j, k]:
        return LEFT_VOLUME, t, n_coll

    ux = velocity[i, j, k, 0]
    uy = velocity[i, j, k, 1]
    uz = velocity[i, j, k, 2]
    gx = vel[0] - ux
    gy = vel[1] - uy
    gz = vel[2] - uz
    rel2 = gx * gx + gy * gy + gz * gz
    vth2 = 8.0 * _KB * temperature[i, j, k] / (math.pi * m_buf)
    rate = sigma * density[i, j, k] * math.sqrt(rel2 + vth2)

    speed2 = vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]
    dt = dt_max
    if rate > 0.0:
        dt = min(dt, p_coll / rate)
    if speed2 > 0.0:
        dt = min(dt, 0.5 * delta / math.sqrt(speed2))
    elif rate <= 0.0:
        return ABORTED, t, n_coll  # stalled: no motion and no collisions
    if not (dt > 0.0 and math.isfinite(dt)):
        return ABORTED, t, n_coll

    pos[0] += vel[0] * dt
    pos[1] += vel[1] * dt
    pos[2] += vel[2] * dt
    t += dt

    i2, j2, k2, ok2 = _voxel_of(pos[0], pos[1], pos[2], origin, inv_delta, nx, ny, nz)
    if not ok2 or not occupied[i2, j2, k2]:
        return LEFT_VOLUME, t, n_coll

    p = rate * dt  # == p_coll unless the step was clamped
    if p > 0.0 and _rng.uniform(state) < p:
        u2x = velocity[i2, j2, k2, 0]
        u2y = velocity[i2, j2, k2, 1]
        u2z = velocity[i2, j2, k2, 2]
        T2 = temperature[i2, j2, k2]
        if method_id == 0:
            px, py, pz = _partner_direct(state, u2x, u2y, u2z, T2, m_buf)
        else:
            px, py, pz = _partner_weighted(state, vel[0], vel[1], vel[2],
                                           u2x, u2y, u2z, T2, m_buf, n_cand)
        nvx, nvy, nvz, _, _, _ = _scatter(state, vel[0], vel[1], vel[2],
                                          px, py, pz, m_mol, m_buf)
        vel[0] = nvx
        vel[1] = nvy
        vel[2] = nvz
        n_coll += 1

    for i in range(3):
        if not (math.isfinite(pos[i]) and math.isfinite(vel[i])):
            return ABORTED, t, n_coll
    return INSIDE, t, n_coll


@njit(cache=True, nogil=True)
def _push(ts, ps, vs, ks, count, t, pos, vel, n_coll):
    if count == ts.shape[0]:
        cap = 2 * count
        ts2 = np.empty(cap)
        ps2 = np.empty((cap, 3))
        vs2 = np.empty((cap, 3))
        ks2 = np.empty(cap, np.int64)
        ts2[:count] = ts
        ps2[:count] = ps
        vs2[:count] = vs
        ks2[:count] = ks
        ts, ps, vs, ks = ts2, ps2, vs2, ks2
    ts[count] = t
    for i in range(3):
        ps[count, i] = pos[i]
        vs[count, i] = vel[i]
    ks[count] = n_coll
    return ts, ps, vs, ks, count + 1


@njit(cache=True, nogil=True)
def _trace(state,
           origin, inv_delta, nx, ny, nz, velocity, density, temperature, occupied,
           src_center, src_e1, src_e2, src_normal, src_radius,
           sigma, m_mol, m_buf, method_id, n_cand,
           p_coll, dt_max, delta, source_temp, max_collisions, record_stride):
    """Trace one molecule; returns its subsampled history and terminal info.

    Samples are taken at the initial state, at every record_stride-th
    collision, and at termination (last in-volume state plus the crossing
    step's endpoint).
    """
    pos = np.empty(3)
    vel = np.empty(3)
    _init_molecule(state, pos, vel, src_center, src_e1, src_e2, src_normal,
                   src_radius, source_temp, m_mol)
    prev_pos = np.empty(3)
    prev_vel = np.empty(3)
    t = 0.0
    n_coll = 0

    cap = 64
    ts = np.empty(cap)
    ps = np.empty((cap, 3))
    vs = np.empty((cap, 3))
    ks = np.empty(cap, np.int64)
    count = 0
    ts, ps, vs, ks, count = _push(ts, ps, vs, ks, count, t, pos, vel, n_coll)

    i, j, k, ok = _voxel_of(pos[0], pos[1], pos[2], origin, inv_delta, nx, ny, nz)
    if not ok or not occupied[i, j, k]:
        # initialized outside the simulation volume: terminal at the start
        return LEFT_VOLUME, count, ts, ps, vs, ks, t, n_coll

    status = INSIDE
    while True:
        prev_t = t
        prev_n = n_coll
        for i in range(3):
            prev_pos[i] = pos[i]
            prev_vel[i] = vel[i]
        status, t, n_coll = _step(
            state, pos, vel, t, n_coll,
            origin, inv_delta, nx, ny, nz, velocity, density, temperature,
            occupied, sigma, m_mol, m_buf, method_id, n_cand, p_coll, dt_max,
            delta)
        if status == ABORTED:
            break
        if status == LEFT_VOLUME:
            ts, ps, vs, ks, count = _push(ts, ps, vs, ks, count, prev_t,
                                          prev_pos, prev_vel, prev_n)
            ts, ps, vs, ks, count = _push(ts, ps, vs, ks, count, t, pos, vel,
                                          n_coll)
            break
        if n_coll != prev_n:
            if n_coll % record_stride == 0:
                ts, ps, vs, ks, count = _push(ts, ps, vs, ks, count, t, pos,
                                              vel, n_coll)
            if n_coll >= max_collisions:
                status = CAP_REACHED
                if n_coll % record_stride != 0:
                    ts, ps, vs, ks, count = _push(ts, ps, vs, ks, count, t,
                                                  pos, vel, n_coll)
                break
    return status, count, ts, ps, vs, ks, t, n_coll
