"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` function for function and are used whenever
the compiled extension is unavailable (or ``SUBSURR_PURE_PYTHON=1``).
"""
import numpy as np

GAUSS = 1.0 / np.sqrt(3.0)
HEX_SIGNS = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                      [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=np.float64)


def _hex_shape_gradients():
    """dN/dxi at the 8 Gauss points, shape (8 gp, 8 nodes, 3)."""
    pts = HEX_SIGNS * GAUSS
    out = np.empty((8, 8, 3))
    for g, (xi, eta, zeta) in enumerate(pts):
        a = 1.0 + xi * HEX_SIGNS[:, 0]
        b = 1.0 + eta * HEX_SIGNS[:, 1]
        c = 1.0 + zeta * HEX_SIGNS[:, 2]
        out[g, :, 0] = HEX_SIGNS[:, 0] * b * c / 8.0
        out[g, :, 1] = HEX_SIGNS[:, 1] * a * c / 8.0
        out[g, :, 2] = HEX_SIGNS[:, 2] * a * b / 8.0
    return out


_DN = _hex_shape_gradients()


def isotropic_d(E, nu):
    E = np.asarray(E, dtype=np.float64)
    nu = np.asarray(nu, dtype=np.float64)
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros(E.shape + (6, 6))
    D[..., :3, :3] = lam[..., None, None]
    for i in range(3):
        D[..., i, i] += 2 * mu
        D[..., 3 + i, 3 + i] = mu
    return D


def hex_stiffness_batch(coords, E, nu):
    """Element stiffness matrices for a batch of trilinear hexes.

    Parameters
    ----------
    coords : (n, 8, 3) array of nodal coordinates
    E, nu : (n,) arrays of material constants

    Returns
    -------
    (n, 24, 24) array, node-major dof ordering.  Raises ``ValueError`` if any
    Gauss point has a non-positive Jacobian determinant.
    """
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    n = coords.shape[0]
    D = isotropic_d(np.broadcast_to(E, (n,)), np.broadcast_to(nu, (n,)))
    K = np.zeros((n, 24, 24))
    for g in range(8):
        J = np.einsum("ai,naj->nij", _DN[g], coords)          # J[i,j] = dx_j/dxi_i
        det = np.linalg.det(J)
        if np.any(det <= 0):
            bad = int(np.flatnonzero(det <= 0)[0])
            raise ValueError(f"element {bad}: non-positive Jacobian determinant {det[bad]:.3e}")
        dNx = np.einsum("nij,aj->nai", np.linalg.inv(J), _DN[g])   # (n, 8, 3)
        B = np.zeros((n, 6, 24))
        x, y, z = dNx[:, :, 0], dNx[:, :, 1], dNx[:, :, 2]
        B[:, 0, 0::3] = x
        B[:, 1, 1::3] = y
        B[:, 2, 2::3] = z
        B[:, 3, 1::3] = z
        B[:, 3, 2::3] = y
        B[:, 4, 0::3] = z
        B[:, 4, 2::3] = x
        B[:, 5, 0::3] = y
        B[:, 5, 1::3] = x
        K += np.einsum("nki,nkl,nlj->nij", B, D, B) * det[:, None, None]
    return K


def _offsets(dims):
    woff, boff = [], []
    pos = 0
    for l in range(len(dims) - 1):
        woff.append(pos)
        pos += dims[l + 1] * dims[l]
        boff.append(pos)
        pos += dims[l + 1]
    return woff, boff, pos


def unpack(theta, dims):
    woff, boff, _ = _offsets(dims)
    Ws, bs = [], []
    for l in range(len(dims) - 1):
        Ws.append(theta[woff[l]:woff[l] + dims[l + 1] * dims[l]].reshape(dims[l + 1], dims[l]))
        bs.append(theta[boff[l]:boff[l] + dims[l + 1]])
    return Ws, bs


def mlp_forward(theta, dims, X):
    Ws, bs = unpack(np.asarray(theta, dtype=np.float64), list(dims))
    h = np.asarray(X, dtype=np.float64)
    for l, (W, b) in enumerate(zip(Ws, bs)):
        h = h @ W.T + b
        if l < len(Ws) - 1:
            h = np.maximum(h, 0.0)
    return h


def tril_index(k):
    return np.tril_indices(k)


def mlp_loss_grad(theta, dims, X, T, head):
    """Mean squared-norm loss and its gradient with respect to ``theta``.

    ``head`` 0: prediction is the network output.  ``head`` 1: the output is
    the packed lower triangle of L and the prediction is L L^T x.
    """
    dims = list(dims)
    theta = np.asarray(theta, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64)
    n = X.shape[0]
    Ws, bs = unpack(theta, dims)
    hs, zs = [X], []
    h = X
    for l, (W, b) in enumerate(zip(Ws, bs)):
        z = h @ W.T + b
        zs.append(z)
        h = np.maximum(z, 0.0) if l < len(Ws) - 1 else z
        hs.append(h)
    out = hs[-1]
    if head == 0:
        R = out - T
        gout = (2.0 / n) * R
    else:
        k = dims[0]
        ti, tj = tril_index(k)
        L = np.zeros((n, k, k))
        L[:, ti, tj] = out
        v = np.einsum("nji,nj->ni", L, X)
        pred = np.einsum("nij,nj->ni", L, v)
        R = pred - T
        g = (2.0 / n) * R
        w = np.einsum("nji,nj->ni", L, g)
        GL = g[:, :, None] * v[:, None, :] + X[:, :, None] * w[:, None, :]
        gout = GL[:, ti, tj]
    loss = float(np.sum(R * R) / n)

    grad = np.zeros_like(theta)
    woff, boff, _ = _offsets(dims)
    for l in range(len(Ws) - 1, -1, -1):
        W = Ws[l]
        grad[woff[l]:woff[l] + W.size] = (gout.T @ hs[l]).ravel()
        grad[boff[l]:boff[l] + W.shape[0]] = gout.sum(axis=0)
        if l > 0:
            gout = (gout @ W) * (zs[l - 1] > 0)
    return loss, grad


def adam_step(theta, grad, m, v, lr, beta1, beta2, eps, step):
    """In-place Adam update; ``step`` counts from 1."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    mhat = m / (1 - beta1 ** step)
    vhat = v / (1 - beta2 ** step)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)
