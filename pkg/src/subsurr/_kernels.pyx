# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: hex element integration and small-MLP training.

Signatures match ``_pykernels``.  The MLP kernels process one sample at a
time with no temporaries, which is where the numpy version pays most of
its per-call overhead for the narrow networks used here.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, pow
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef double GP = 0.5773502691896257645
cdef int SGN[8][3]
SGN[0][:] = [-1, -1, -1]
SGN[1][:] = [1, -1, -1]
SGN[2][:] = [1, 1, -1]
SGN[3][:] = [-1, 1, -1]
SGN[4][:] = [-1, -1, 1]
SGN[5][:] = [1, -1, 1]
SGN[6][:] = [1, 1, 1]
SGN[7][:] = [-1, 1, 1]


cdef int _hex_one(const double* X, double E, double nu, double* K) noexcept nogil:
    """Accumulate one element's stiffness into K (24x24, zeroed by caller).

    Returns the index of the first Gauss point with det J <= 0, else -1.
    """
    cdef double lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    cdef double mu = E / (2.0 * (1.0 + nu))
    cdef double dN[8][3]
    cdef double dx[8][3]
    cdef double J[3][3]
    cdef double Ji[3][3]
    cdef double xi, eta, zeta, a, b, c, det, w
    cdef double bi[6]
    cdef double DBj[6]
    cdef int g, n, i, j, p, q, ci, cj
    cdef double xa, ya, za, xb, yb, zb, divb
    for g in range(8):
        xi = SGN[g][0] * GP
        eta = SGN[g][1] * GP
        zeta = SGN[g][2] * GP
        for n in range(8):
            a = 1.0 + xi * SGN[n][0]
            b = 1.0 + eta * SGN[n][1]
            c = 1.0 + zeta * SGN[n][2]
            dN[n][0] = SGN[n][0] * b * c * 0.125
            dN[n][1] = SGN[n][1] * a * c * 0.125
            dN[n][2] = SGN[n][2] * a * b * 0.125
        for i in range(3):
            for j in range(3):
                J[i][j] = 0.0
                for n in range(8):
                    J[i][j] += dN[n][i] * X[3 * n + j]
        det = (J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1])
               - J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0])
               + J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]))
        if det <= 0.0:
            return g
        Ji[0][0] = (J[1][1] * J[2][2] - J[1][2] * J[2][1]) / det
        Ji[0][1] = (J[0][2] * J[2][1] - J[0][1] * J[2][2]) / det
        Ji[0][2] = (J[0][1] * J[1][2] - J[0][2] * J[1][1]) / det
        Ji[1][0] = (J[1][2] * J[2][0] - J[1][0] * J[2][2]) / det
        Ji[1][1] = (J[0][0] * J[2][2] - J[0][2] * J[2][0]) / det
        Ji[1][2] = (J[0][2] * J[1][0] - J[0][0] * J[1][2]) / det
        Ji[2][0] = (J[1][0] * J[2][1] - J[1][1] * J[2][0]) / det
        Ji[2][1] = (J[0][1] * J[2][0] - J[0][0] * J[2][1]) / det
        Ji[2][2] = (J[0][0] * J[1][1] - J[0][1] * J[1][0]) / det
        for n in range(8):
            for i in range(3):
                dx[n][i] = Ji[i][0] * dN[n][0] + Ji[i][1] * dN[n][1] + Ji[i][2] * dN[n][2]
        w = det
        # K_ab = B_a^T D B_b for isotropic D, written out per component pair
        for p in range(8):
            xa = dx[p][0]; ya = dx[p][1]; za = dx[p][2]
            for q in range(8):
                xb = dx[q][0]; yb = dx[q][1]; zb = dx[q][2]
                divb = mu * (xa * xb + ya * yb + za * zb)
                K[(3 * p + 0) * 24 + 3 * q + 0] += w * (lam * xa * xb + mu * xa * xb + divb)
                K[(3 * p + 0) * 24 + 3 * q + 1] += w * (lam * xa * yb + mu * ya * xb)
                K[(3 * p + 0) * 24 + 3 * q + 2] += w * (lam * xa * zb + mu * za * xb)
                K[(3 * p + 1) * 24 + 3 * q + 0] += w * (lam * ya * xb + mu * xa * yb)
                K[(3 * p + 1) * 24 + 3 * q + 1] += w * (lam * ya * yb + mu * ya * yb + divb)
                K[(3 * p + 1) * 24 + 3 * q + 2] += w * (lam * ya * zb + mu * za * yb)
                K[(3 * p + 2) * 24 + 3 * q + 0] += w * (lam * za * xb + mu * xa * zb)
                K[(3 * p + 2) * 24 + 3 * q + 1] += w * (lam * za * yb + mu * ya * zb)
                K[(3 * p + 2) * 24 + 3 * q + 2] += w * (lam * za * zb + mu * za * zb + divb)
    return -1


def hex_stiffness_batch(coords, E, nu):
    cdef const double[:, :, ::1] X = np.ascontiguousarray(coords, dtype=np.float64)
    cdef Py_ssize_t n = X.shape[0]
    cdef const double[::1] Ev = np.ascontiguousarray(np.broadcast_to(E, (n,)), dtype=np.float64)
    cdef const double[::1] nv = np.ascontiguousarray(np.broadcast_to(nu, (n,)), dtype=np.float64)
    out = np.zeros((n, 24, 24))
    cdef double[:, :, ::1] K = out
    cdef Py_ssize_t e
    cdef int bad = -1
    cdef Py_ssize_t bad_el = -1
    with nogil:
        for e in range(n):
            bad = _hex_one(&X[e, 0, 0], Ev[e], nv[e], &K[e, 0, 0])
            if bad >= 0:
                bad_el = e
                break
    if bad_el >= 0:
        raise ValueError(f"element {bad_el}: non-positive Jacobian determinant at Gauss point {bad}")
    return out


cdef struct Net:
    Py_ssize_t nl
    Py_ssize_t* dims
    Py_ssize_t* woff
    Py_ssize_t* boff
    Py_ssize_t* hoff
    Py_ssize_t maxw


cdef Net _make_net(dims) except *:
    cdef Net net
    cdef Py_ssize_t l, pos = 0, hpos = 0
    net.nl = len(dims) - 1
    net.dims = <Py_ssize_t*> malloc((net.nl + 1) * sizeof(Py_ssize_t))
    net.woff = <Py_ssize_t*> malloc(net.nl * sizeof(Py_ssize_t))
    net.boff = <Py_ssize_t*> malloc(net.nl * sizeof(Py_ssize_t))
    net.hoff = <Py_ssize_t*> malloc((net.nl + 1) * sizeof(Py_ssize_t))
    net.maxw = 0
    for l in range(net.nl + 1):
        net.dims[l] = dims[l]
        net.hoff[l] = hpos
        hpos += net.dims[l]
        if net.dims[l] > net.maxw:
            net.maxw = net.dims[l]
    for l in range(net.nl):
        net.woff[l] = pos
        pos += net.dims[l + 1] * net.dims[l]
        net.boff[l] = pos
        pos += net.dims[l + 1]
    return net


cdef void _free_net(Net* net) noexcept:
    free(net.dims)
    free(net.woff)
    free(net.boff)
    free(net.hoff)


cdef Py_ssize_t _hsize(Net* net) noexcept nogil:
    return net.hoff[net.nl] + net.dims[net.nl]


cdef void _forward(Net* net, const double* th, double* h, double* z) noexcept nogil:
    """h[hoff[0]:] holds the input; fills activations h and pre-activations z."""
    cdef Py_ssize_t l, i, j, din, dout
    cdef const double* W
    cdef const double* b
    cdef double* hin
    cdef double* hout
    cdef double s
    for l in range(net.nl):
        din = net.dims[l]
        dout = net.dims[l + 1]
        W = th + net.woff[l]
        b = th + net.boff[l]
        hin = h + net.hoff[l]
        hout = h + net.hoff[l + 1]
        for i in range(dout):
            s = b[i]
            for j in range(din):
                s += W[i * din + j] * hin[j]
            z[net.hoff[l + 1] + i] = s
            if l < net.nl - 1 and s < 0.0:
                hout[i] = 0.0
            else:
                hout[i] = s


cdef void _backward(Net* net, const double* th, const double* h, const double* z,
                    double* gcur, double* gprev, double* grad) noexcept nogil:
    cdef Py_ssize_t l, i, j, din, dout
    cdef const double* W
    cdef const double* hin
    cdef double* gW
    cdef double* gb
    cdef double* tmp
    cdef double gi
    for l in range(net.nl - 1, -1, -1):
        din = net.dims[l]
        dout = net.dims[l + 1]
        W = th + net.woff[l]
        hin = h + net.hoff[l]
        gW = grad + net.woff[l]
        gb = grad + net.boff[l]
        for i in range(dout):
            gi = gcur[i]
            gb[i] += gi
            if gi != 0.0:
                for j in range(din):
                    gW[i * din + j] += gi * hin[j]
        if l > 0:
            for j in range(din):
                gprev[j] = 0.0
            for i in range(dout):
                gi = gcur[i]
                if gi != 0.0:
                    for j in range(din):
                        gprev[j] += W[i * din + j] * gi
            for j in range(din):
                if z[net.hoff[l] + j] <= 0.0:
                    gprev[j] = 0.0
            tmp = gcur
            gcur = gprev
            gprev = tmp


def mlp_forward(theta, dims, X):
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Net net = _make_net(list(dims))
    cdef Py_ssize_t n = Xv.shape[0], s, j, d0 = net.dims[0], dl = net.dims[net.nl]
    out = np.empty((n, dl))
    cdef double[:, ::1] Y = out
    cdef double* h = <double*> malloc(_hsize(&net) * sizeof(double))
    cdef double* z = <double*> malloc(_hsize(&net) * sizeof(double))
    try:
        with nogil:
            for s in range(n):
                for j in range(d0):
                    h[j] = Xv[s, j]
                _forward(&net, &th[0], h, z)
                for j in range(dl):
                    Y[s, j] = h[net.hoff[net.nl] + j]
    finally:
        free(h)
        free(z)
        _free_net(&net)
    return out


def mlp_loss_grad(theta, dims, X, T, int head):
    cdef const double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Tv = np.ascontiguousarray(T, dtype=np.float64)
    cdef Net net = _make_net(list(dims))
    cdef Py_ssize_t n = Xv.shape[0], s, j, r, c, k = net.dims[0], dl = net.dims[net.nl]
    grad_arr = np.zeros(th.shape[0])
    cdef double[::1] grad = grad_arr
    cdef Py_ssize_t hs = _hsize(&net)
    cdef double* h = <double*> malloc(hs * sizeof(double))
    cdef double* z = <double*> malloc(hs * sizeof(double))
    cdef Py_ssize_t gw = net.maxw if net.maxw > k else k
    cdef double* g1 = <double*> malloc(gw * sizeof(double))
    cdef double* g2 = <double*> malloc(gw * sizeof(double))
    cdef double* v = <double*> malloc(k * sizeof(double))
    cdef double* w = <double*> malloc(k * sizeof(double))
    cdef double* gr = <double*> malloc(k * sizeof(double))
    cdef double* out
    cdef double loss = 0.0, scale = 2.0 / n, res, acc
    try:
        with nogil:
            for s in range(n):
                for j in range(k):
                    h[j] = Xv[s, j]
                _forward(&net, &th[0], h, z)
                out = h + net.hoff[net.nl]
                if head == 0:
                    for j in range(dl):
                        res = out[j] - Tv[s, j]
                        loss += res * res
                        g1[j] = scale * res
                else:
                    # L[r, c] = out[r (r + 1) / 2 + c] for c <= r
                    for c in range(k):
                        acc = 0.0
                        for r in range(c, k):
                            acc += out[r * (r + 1) // 2 + c] * Xv[s, r]
                        v[c] = acc
                    for r in range(k):
                        acc = 0.0
                        for c in range(r + 1):
                            acc += out[r * (r + 1) // 2 + c] * v[c]
                        res = acc - Tv[s, r]
                        loss += res * res
                        gr[r] = scale * res
                    for c in range(k):
                        acc = 0.0
                        for r in range(c, k):
                            acc += out[r * (r + 1) // 2 + c] * gr[r]
                        w[c] = acc
                    for r in range(k):
                        for c in range(r + 1):
                            g1[r * (r + 1) // 2 + c] = gr[r] * v[c] + Xv[s, r] * w[c]
                _backward(&net, &th[0], h, z, g1, g2, &grad[0])
    finally:
        free(h); free(z); free(g1); free(g2); free(v); free(w); free(gr)
        _free_net(&net)
    return loss / n, grad_arr


def adam_step(double[::1] theta, const double[::1] grad, double[::1] m, double[::1] v,
              double lr, double beta1, double beta2, double eps, long step):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double c1 = 1.0 - pow(beta1, step)
    cdef double c2 = 1.0 - pow(beta2, step)
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            theta[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)
