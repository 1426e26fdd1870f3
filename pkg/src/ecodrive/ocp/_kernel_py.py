"""Pure numpy Bellman stage; the reference the compiled kernel must match bit for bit."""

from __future__ import annotations

import numpy as np

from .grid import WAIT, interpolate


def bellman_stage(next_values, iv0, wv, is0, ws, it0, wt, cost, mask):
    """One backward-induction stage over every (v, soc, t) node.

    Parameters
    ----------
    next_values : (nv', ns, nt) array
        Cost-to-go at the next position.
    iv0, wv : (nv, nu) arrays
        Next-velocity lower node and weight per (velocity node, candidate);
        index -1 marks an infeasible candidate.
    is0, ws : (nv, nu, ns) arrays
        Next-SoC lower node and weight per SoC node.
    it0, wt : (nv, nu, nt) arrays
        Arrival-time lower node and weight per time node.
    cost : (nv, nu) array
        Stage cost of each candidate.
    mask : (nv, nu, nt) uint8 array
        Time-dependent feasibility (signals, following distance).

    Returns
    -------
    values : (nv, ns, nt) array
    best : (nv, ns, nt) int64 array
        First candidate attaining the minimum, -1 where none is finite.
    """
    total = interpolate(next_values, iv0[:, :, None, None], wv[:, :, None, None],
                        is0[:, :, :, None], ws[:, :, :, None], it0[:, :, None, :], wt[:, :, None, :])
    total = cost[:, :, None, None] + total
    total = np.where(mask[:, :, None, :] != 0, total, np.inf)
    best = np.argmin(total, axis=1)
    values = np.take_along_axis(total, best[:, None], axis=1)[:, 0]
    best = np.where(np.isfinite(values), best, -1).astype(np.int64)
    return np.ascontiguousarray(values), np.ascontiguousarray(best)


def standstill_sweep(values, best, iz, wait_cost):
    """Let the v = 0 nodes wait: ``V(0, s, t_l) = min(V, wait_cost[l] + V(0, s, t_{l+1}))``.

    Updates ``values`` and ``best`` in place (``best`` gets ``WAIT``).
    Launching wins ties.
    """
    nt = values.shape[2]
    for l in range(nt - 2, -1, -1):
        w = wait_cost[l] + values[iz, :, l + 1]
        better = w < values[iz, :, l]
        values[iz, :, l] = np.where(better, w, values[iz, :, l])
        best[iz, :, l] = np.where(better, WAIT, best[iz, :, l])


def stage_masks(t_axis, dt, v_next, valid, depart_spat, arrive_spat, gap, forecast, snap):
    """Arrival-time indices and the time-dependent feasibility mask of one stage.

    Parameters
    ----------
    t_axis : (nt,) uniform time axis
    dt, v_next : (nv, nu) step duration and arrival velocity per candidate
    valid : (nv, nu) statically feasible candidates; others get mask 0
    depart_spat, arrive_spat : (enabled, cycle, green_start, green_end, offset)
        Signal at the departure node (departure time must be green) and at
        the arrival node (arrival must be green unless the vehicle stops).
    gap : (enabled, initial_gap, offset_ref, travel, d0, t_gap, denom, margin, d_radar, t_release)
    forecast : (start, period, velocities, offsets)
    snap : weight snapping tolerance

    Returns
    -------
    it0 : (nv, nu, nt) int64, -1 outside the axis
    wt : (nv, nu, nt) float
    mask : (nv, nu, nt) uint8
    """
    nt = len(t_axis)
    t0 = t_axis[0]
    step = (t_axis[nt - 1] - t0) / (nt - 1)
    x = t_axis[None, None, :] + dt[:, :, None]
    f = (x - t0) / step
    i = np.clip(np.floor(f), 0.0, nt - 2.0)
    w = f - i
    i = i.astype(np.int64)
    w = np.where(np.abs(w) <= snap, 0.0, w)
    w = np.where(np.abs(w - 1.0) <= snap, 1.0, w)
    up = w == 1.0
    i = np.where(up, i + 1, i)
    w = np.where(up, 0.0, w)
    bad = ~((w >= 0.0) & (w < 1.0))
    it0 = np.where(bad, -1, i)
    wt = np.where(bad, 0.0, w)
    mask = np.broadcast_to(valid[:, :, None], x.shape).copy()
    if depart_spat[0]:
        mask &= _green(depart_spat, t_axis)[None, None, :]
    if arrive_spat[0]:
        mask &= _green(arrive_spat, x) | (v_next[:, :, None] <= 1e-9)
    if gap[0]:
        _, g0, off_ref, travel, d0, t_gap, denom, margin, d_radar, t_release = gap
        start, period, fv, foff = forecast
        n = len(fv)
        rel = np.maximum(x - start, 0.0)
        k = np.minimum(np.floor(rel / period), n - 1.0)
        ki = k.astype(np.int64)
        vt = fv[ki]
        off = foff[ki] + vt * (rel - k * period)
        g = g0 + (off - off_ref) - travel
        vn = v_next[:, :, None]
        need = np.maximum(d0 + vn * t_gap + vn * (vn - vt) / denom, d0) + margin
        mask &= (x > t_release) | (g > d_radar) | (g >= need)
    return it0, wt, mask.astype(np.uint8)


def _green(spat, t):
    _, cycle, gs, ge, offset = spat
    x = t - offset
    phase = x - cycle * np.floor(x / cycle)
    return (phase >= gs) & (phase < ge)
