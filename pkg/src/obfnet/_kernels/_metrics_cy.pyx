# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled metric kernels; semantics mirror metrics_np.py exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef double SSIM_C1 = 0.01 * 0.01
cdef double SSIM_C2 = 0.03 * 0.03


def ssim_channel(object a_in, object b_in, int win):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a = np.ascontiguousarray(a_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] b = np.ascontiguousarray(b_in, dtype=np.float64)
    cdef Py_ssize_t h = a.shape[0], w = a.shape[1]
    cdef Py_ssize_t oh = h - win + 1, ow = w - win + 1
    cdef Py_ssize_t i, j, di, dj
    cdef double n = <double>(win * win)
    cdef double sa, sb, saa, sbb, sab, va, vb
    cdef double mu_a, mu_b, var_a, var_b, cov, num, den
    cdef double total = 0.0

    for i in range(oh):
        for j in range(ow):
            sa = sb = saa = sbb = sab = 0.0
            for di in range(win):
                for dj in range(win):
                    va = a[i + di, j + dj]
                    vb = b[i + di, j + dj]
                    sa += va
                    sb += vb
                    saa += va * va
                    sbb += vb * vb
                    sab += va * vb
            mu_a = sa / n
            mu_b = sb / n
            var_a = saa / n - mu_a * mu_a
            var_b = sbb / n - mu_b * mu_b
            cov = sab / n - mu_a * mu_b
            num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
            den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
            total += num / den
    return total / <double>(oh * ow)


def joint_histogram(object a_in, object b_in, int bins):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a = np.ascontiguousarray(a_in, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = np.ascontiguousarray(b_in, dtype=np.float64).ravel()
    cdef cnp.ndarray[cnp.float64_t, ndim=2] hist = np.zeros((bins, bins), dtype=np.float64)
    cdef Py_ssize_t k, ia, ib, n = a.shape[0]
    for k in range(n):
        ia = <Py_ssize_t>(a[k] * bins)
        ib = <Py_ssize_t>(b[k] * bins)
        if ia > bins - 1:
            ia = bins - 1
        if ib > bins - 1:
            ib = bins - 1
        hist[ia, ib] += 1.0
    return hist


def conv2d_replicate(object img_in, object kernel_in):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] img = np.ascontiguousarray(img_in, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] kernel = np.ascontiguousarray(kernel_in, dtype=np.float64)
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    cdef Py_ssize_t kh = kernel.shape[0], kw = kernel.shape[1]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((h, w), dtype=np.float64)
    cdef Py_ssize_t i, j, di, dj, si, sj
    cdef double acc

    for i in range(h):
        for j in range(w):
            acc = 0.0
            for di in range(kh):
                si = i + di - ph
                if si < 0:
                    si = 0
                elif si > h - 1:
                    si = h - 1
                for dj in range(kw):
                    sj = j + dj - pw
                    if sj < 0:
                        sj = 0
                    elif sj > w - 1:
                        sj = w - 1
                    acc += img[si, sj] * kernel[di, dj]
            out[i, j] = acc
    return out
