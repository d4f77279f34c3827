"""Numba-compiled hot kernels for the optimized backend.

All kernels are serial (`parallel=False`) and release the GIL, so they can
be driven concurrently by data-parallel worker threads without relying on
numba's threading layer being re-entrant. Dot products accumulate in
float64 and round once to float32 on store, keeping results within a few
ulp of the float64 reference backend.
"""

import numpy as np
from numba import njit

_JIT = dict(nogil=True, cache=True, fastmath=True)


@njit(**_JIT)
def matmul2d_f32(a, b, out):
    m, k = a.shape
    n = b.shape[1]
    for i in range(m):
        acc = np.zeros(n, dtype=np.float64)
        for p in range(k):
            aip = np.float64(a[i, p])
            row = b[p]
            for j in range(n):
                acc[j] += aip * row[j]
        for j in range(n):
            out[i, j] = np.float32(acc[j])


@njit(**_JIT)
def matmul3d_f32(a, b, out):
    bs, m, k = a.shape
    n = b.shape[2]
    for bi in range(bs):
        for i in range(m):
            acc = np.zeros(n, dtype=np.float64)
            for p in range(k):
                aip = np.float64(a[bi, i, p])
                row = b[bi, p]
                for j in range(n):
                    acc[j] += aip * row[j]
            for j in range(n):
                out[bi, i, j] = np.float32(acc[j])


@njit(**_JIT)
def conv2d_f32(x, w, stride, out):
    # x is pre-padded NHWC; w is (kh, kw, cin, cout)
    bs = x.shape[0]
    kh, kw, ci, co = w.shape
    ho, wo = out.shape[1], out.shape[2]
    for b in range(bs):
        for oh in range(ho):
            ih0 = oh * stride
            for ow in range(wo):
                iw0 = ow * stride
                acc = np.zeros(co, dtype=np.float64)
                for di in range(kh):
                    for dj in range(kw):
                        for c in range(ci):
                            xv = np.float64(x[b, ih0 + di, iw0 + dj, c])
                            wrow = w[di, dj, c]
                            for oc in range(co):
                                acc[oc] += xv * wrow[oc]
                for oc in range(co):
                    out[b, oh, ow, oc] = np.float32(acc[oc])
