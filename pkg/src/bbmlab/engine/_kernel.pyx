# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled path kernel.

Mirrors kernel_py.run_paths operation for operation: same expression trees,
same left-to-right accumulation order, IEEE max for running maxima, so the
two backends return bit-identical results for identical pre-drawn inputs.
"""

from libc.math cimport sqrt
from libc.stdint cimport int64_t

import numpy as np

NAME = "compiled"


def run_paths(object plan, object normals, object logu, bint collect=False):
    """Run all particle segments; see engine.core for the output contract."""
    sk = plan.skeleton
    cdef Py_ssize_t d = plan.d
    cdef int64_t[::1] parent = np.ascontiguousarray(sk.parent, dtype=np.int64)
    cdef int64_t[::1] step_off = np.ascontiguousarray(plan.step_off, dtype=np.int64)
    cdef double[::1] step_h = np.ascontiguousarray(plan.step_h, dtype=np.float64)
    cdef double[::1] norm = np.ascontiguousarray(normals, dtype=np.float64)
    cdef bint use_bridge = logu is not None
    cdef double[::1] lu = (
        np.ascontiguousarray(logu, dtype=np.float64) if use_bridge
        else np.empty(0, dtype=np.float64)
    )
    cdef int64_t[::1] pair_off = np.ascontiguousarray(plan.pair_off, dtype=np.int64)
    cdef int64_t[::1] pair_obs = np.ascontiguousarray(plan.pair_obs, dtype=np.int64)
    cdef int64_t[::1] pair_k = np.ascontiguousarray(plan.pair_k, dtype=np.int64)
    cdef double[::1] obs_radius = np.ascontiguousarray(plan.obs_radius, dtype=np.float64)
    cdef double[::1] x0 = np.ascontiguousarray(plan.x0, dtype=np.float64)

    cdef Py_ssize_t P = parent.shape[0]
    cdef Py_ssize_t J = obs_radius.shape[0]
    cdef Py_ssize_t K = pair_obs.shape[0]

    n_active_arr = np.zeros(J, dtype=np.int64)
    final_pos_arr = np.empty((P, d), dtype=np.float64)
    final_max_arr = np.empty(P, dtype=np.float64)
    pair_max_arr = np.empty(K, dtype=np.float64)
    pair_pos_arr = np.empty((K, d), dtype=np.float64) if collect else None

    cdef int64_t[::1] n_active = n_active_arr
    cdef double[:, ::1] fpos = final_pos_arr
    cdef double[::1] fmax = final_max_arr
    cdef double[::1] pmax = pair_max_arr
    cdef double[:, ::1] ppos = pair_pos_arr if collect else np.empty((1, d), dtype=np.float64)
    cdef bint do_collect = collect

    cdef double[::1] cum = np.zeros(d, dtype=np.float64)
    cdef double[::1] st = np.zeros(d, dtype=np.float64)
    cdef double[::1] cur = np.zeros(d, dtype=np.float64)

    cdef Py_ssize_t i, c, p
    cdef int64_t s, s_lo, s_hi, pp, pe, ks, jj
    cdef double scale, rr, rad, prev, v, diff, m_tot, inh

    with nogil:
        for i in range(P):
            p = parent[i]
            if p < 0:
                for c in range(d):
                    st[c] = x0[c]
            else:
                for c in range(d):
                    st[c] = fpos[p, c]
            rr = 0.0
            for c in range(d):
                rr += st[c] * st[c]
            prev = sqrt(rr)
            inh = prev if p < 0 else fmax[p]
            m_tot = inh
            for c in range(d):
                cum[c] = 0.0
                cur[c] = st[c]

            pp = pair_off[i]
            pe = pair_off[i + 1]
            while pp < pe and pair_k[pp] == 0:
                jj = pair_obs[pp]
                if m_tot <= obs_radius[jj]:
                    n_active[jj] += 1
                pmax[pp] = m_tot
                if do_collect:
                    for c in range(d):
                        ppos[pp, c] = cur[c]
                pp += 1

            ks = 0
            s_lo = step_off[i]
            s_hi = step_off[i + 1]
            for s in range(s_lo, s_hi):
                ks += 1
                scale = sqrt(step_h[s])
                rr = 0.0
                for c in range(d):
                    cum[c] += norm[s * d + c] * scale
                    cur[c] = st[c] + cum[c]
                    rr += cur[c] * cur[c]
                rad = sqrt(rr)
                if use_bridge:
                    diff = prev - rad
                    v = 0.5 * (prev + rad + sqrt(diff * diff - 2.0 * step_h[s] * lu[s]))
                else:
                    v = rad
                if v > m_tot:
                    m_tot = v
                prev = rad
                while pp < pe and pair_k[pp] == ks:
                    jj = pair_obs[pp]
                    if m_tot <= obs_radius[jj]:
                        n_active[jj] += 1
                    pmax[pp] = m_tot
                    if do_collect:
                        for c in range(d):
                            ppos[pp, c] = cur[c]
                    pp += 1

            for c in range(d):
                fpos[i, c] = cur[c]
            fmax[i] = m_tot

    return n_active_arr, final_pos_arr, final_max_arr, pair_max_arr, pair_pos_arr
