# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Bellman stage.  Mirrors ``_kernel_py`` operation by operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, floor, fabs

cnp.import_array()

cdef int WAIT = -2


cdef inline double lerp(double a, double b, double w) noexcept nogil:
    if w == 0.0:
        return a
    if w == 1.0:
        return b
    return (1.0 - w) * a + w * b


def bellman_stage(const double[:, :, ::1] next_values,
                  const long long[:, ::1] iv0, const double[:, ::1] wv,
                  const long long[:, :, ::1] is0, const double[:, :, ::1] ws,
                  const long long[:, :, ::1] it0, const double[:, :, ::1] wt,
                  const double[:, ::1] cost, const unsigned char[:, :, ::1] mask):
    cdef Py_ssize_t nv = iv0.shape[0], nu = iv0.shape[1]
    cdef Py_ssize_t ns = is0.shape[2], nt = it0.shape[2]
    cdef Py_ssize_t nv2 = next_values.shape[0], ns2 = next_values.shape[1], nt2 = next_values.shape[2]
    values_arr = np.full((nv, ns, nt), np.inf)
    best_arr = np.full((nv, ns, nt), -1, dtype=np.int64)
    cdef double[:, :, ::1] values = values_arr
    cdef long long[:, :, ::1] best = best_arr
    cdef Py_ssize_t i, u, j, l, a0, a1, c0, c1, e0, e1
    cdef double fv, fs, ft, t00, t01, t10, t11, s0, s1, total
    with nogil:
        for i in range(nv):
            for u in range(nu):
                if iv0[i, u] < 0:
                    continue
                a0 = iv0[i, u]
                a1 = a0 + 1 if a0 + 1 < nv2 else nv2 - 1
                fv = wv[i, u]
                for j in range(ns):
                    if is0[i, u, j] < 0:
                        continue
                    c0 = is0[i, u, j]
                    c1 = c0 + 1 if c0 + 1 < ns2 else ns2 - 1
                    fs = ws[i, u, j]
                    for l in range(nt):
                        if mask[i, u, l] == 0 or it0[i, u, l] < 0:
                            continue
                        e0 = it0[i, u, l]
                        e1 = e0 + 1 if e0 + 1 < nt2 else nt2 - 1
                        ft = wt[i, u, l]
                        t00 = lerp(next_values[a0, c0, e0], next_values[a0, c0, e1], ft)
                        t01 = lerp(next_values[a0, c1, e0], next_values[a0, c1, e1], ft)
                        s0 = lerp(t00, t01, fs)
                        t10 = lerp(next_values[a1, c0, e0], next_values[a1, c0, e1], ft)
                        t11 = lerp(next_values[a1, c1, e0], next_values[a1, c1, e1], ft)
                        s1 = lerp(t10, t11, fs)
                        total = cost[i, u] + lerp(s0, s1, fv)
                        if total < values[i, j, l]:
                            values[i, j, l] = total
                            best[i, j, l] = u
    return values_arr, best_arr


def standstill_sweep(double[:, :, ::1] values, long long[:, :, ::1] best, Py_ssize_t iz,
                     const double[::1] wait_cost):
    cdef Py_ssize_t ns = values.shape[1], nt = values.shape[2], j, l
    cdef double w
    with nogil:
        for l in range(nt - 2, -1, -1):
            for j in range(ns):
                w = wait_cost[l] + values[iz, j, l + 1]
                if w < values[iz, j, l]:
                    values[iz, j, l] = w
                    best[iz, j, l] = WAIT


cdef inline bint green(double t, double cycle, double gs, double ge, double offset) noexcept nogil:
    cdef double x = t - offset
    cdef double phase = x - cycle * floor(x / cycle)
    return phase >= gs and phase < ge


def stage_masks(const double[::1] t_axis, const double[:, ::1] dt, const double[:, ::1] v_next,
                const unsigned char[:, ::1] valid, tuple depart_spat, tuple arrive_spat, tuple gap,
                tuple forecast, double snap):
    cdef Py_ssize_t nv = dt.shape[0], nu = dt.shape[1], nt = t_axis.shape[0]
    it_arr = np.empty((nv, nu, nt), dtype=np.int64)
    wt_arr = np.empty((nv, nu, nt))
    mask_arr = np.empty((nv, nu, nt), dtype=np.uint8)
    cdef long long[:, :, ::1] it0 = it_arr
    cdef double[:, :, ::1] wt = wt_arr
    cdef unsigned char[:, :, ::1] mask = mask_arr
    cdef double t0 = t_axis[0]
    cdef double step = (t_axis[nt - 1] - t0) / (nt - 1)
    cdef bint dep_on = depart_spat[0], arr_on = arrive_spat[0], gap_on = gap[0]
    cdef double dc = depart_spat[1], dgs = depart_spat[2], dge = depart_spat[3], doff = depart_spat[4]
    cdef double ac = arrive_spat[1], ags = arrive_spat[2], age = arrive_spat[3], aoff = arrive_spat[4]
    cdef double g0 = gap[1], off_ref = gap[2], travel = gap[3], d0 = gap[4], t_gap = gap[5]
    cdef double denom = gap[6], margin = gap[7], d_radar = gap[8], t_release = gap[9]
    cdef double fstart = forecast[0], fperiod = forecast[1]
    cdef const double[::1] fv = np.ascontiguousarray(forecast[2], dtype=np.float64)
    cdef const double[::1] foff = np.ascontiguousarray(forecast[3], dtype=np.float64)
    cdef Py_ssize_t nf = fv.shape[0]
    cdef Py_ssize_t i, u, l
    cdef long long ki
    cdef double x, f, fi, w, rel, k, vt, off, g, vn, need
    cdef bint ok
    with nogil:
        for i in range(nv):
            for u in range(nu):
                vn = v_next[i, u]
                for l in range(nt):
                    x = t_axis[l] + dt[i, u]
                    f = (x - t0) / step
                    fi = floor(f)
                    if fi < 0.0:
                        fi = 0.0
                    if fi > nt - 2.0:
                        fi = nt - 2.0
                    w = f - fi
                    ki = <long long>fi
                    if fabs(w) <= snap:
                        w = 0.0
                    if fabs(w - 1.0) <= snap:
                        w = 1.0
                    if w == 1.0:
                        ki = ki + 1
                        w = 0.0
                    if not (w >= 0.0 and w < 1.0):
                        it0[i, u, l] = -1
                        wt[i, u, l] = 0.0
                    else:
                        it0[i, u, l] = ki
                        wt[i, u, l] = w
                    ok = valid[i, u] != 0
                    if ok and dep_on:
                        ok = green(t_axis[l], dc, dgs, dge, doff)
                    if ok and arr_on:
                        ok = green(x, ac, ags, age, aoff) or vn <= 1e-9
                    if ok and gap_on:
                        rel = x - fstart
                        if rel < 0.0:
                            rel = 0.0
                        k = floor(rel / fperiod)
                        if k > nf - 1.0:
                            k = nf - 1.0
                        ki = <long long>k
                        vt = fv[ki]
                        off = foff[ki] + vt * (rel - k * fperiod)
                        g = g0 + (off - off_ref) - travel
                        need = d0 + vn * t_gap + vn * (vn - vt) / denom
                        if need < d0:
                            need = d0
                        need = need + margin
                        ok = x > t_release or g > d_radar or g >= need
                    mask[i, u, l] = 1 if ok else 0
    return it_arr, wt_arr, mask_arr
