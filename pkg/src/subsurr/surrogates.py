"""Interface surrogate model forms: evaluation, stiffness and file format.

All four forms map an interface displacement vector to the force the inner
domain exerts on the interface.  Inputs may be a single vector of length
``n_interface`` or a batch with one sample per row.

The neural forms train on scalar-normalized reduced coordinates,
``x_tilde = x / in_scale`` and ``y_tilde = y / out_scale``.  Scalar scaling
keeps the SPSD structure: the physical factor is
``L = sqrt(out_scale / in_scale) * L_tilde(x_tilde)``.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import kernels
from .pod import PodBasis

FORMS = ("lls", "spsd-lls", "nn", "spsd-nn")
FORMAT_VERSION = 1
_MAGIC = b"SUBSURRM"


class ModelFileError(ValueError):
    """Malformed or corrupted model file."""


class ChecksumError(ModelFileError):
    pass


class UnsupportedVersionError(ModelFileError):
    pass


def tril_size(k: int) -> int:
    return k * (k + 1) // 2


def unpack_tril(packed: np.ndarray, k: int) -> np.ndarray:
    """Packed lower triangles (row-major over row >= col) to ``(..., k, k)``."""
    packed = np.asarray(packed)
    ti, tj = np.tril_indices(k)
    L = np.zeros(packed.shape[:-1] + (k, k))
    L[..., ti, tj] = packed
    return L


def hidden_dims(k_in: int, k_out: int, n_hidden: int = 3) -> Tuple[int, ...]:
    """Layer widths: ``n_hidden`` ReLU layers as wide as the input."""
    return (k_in,) * (n_hidden + 1) + (k_out,)


def init_theta(dims: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    parts = []
    for l in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[l])
        parts.append(rng.uniform(-bound, bound, size=dims[l + 1] * dims[l]))
        parts.append(rng.uniform(-bound, bound, size=dims[l + 1]))
    return np.concatenate(parts)


def n_params(dims: Sequence[int]) -> int:
    return sum(dims[l + 1] * (dims[l] + 1) for l in range(len(dims) - 1))


def theta_layers(theta, dims) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Split a flat parameter vector into ``(W, b)`` pairs."""
    out, pos = [], 0
    for l in range(len(dims) - 1):
        nw = dims[l + 1] * dims[l]
        W = np.asarray(theta[pos:pos + nw]).reshape(dims[l + 1], dims[l])
        pos += nw
        b = np.asarray(theta[pos:pos + dims[l + 1]])
        pos += dims[l + 1]
        out.append((W, b))
    return out


def layers_theta(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers])


@dataclass(frozen=True)
class LowRankStiffness:
    """Symmetric stiffness ``factor @ factor.T``."""
    factor: np.ndarray

    def __matmul__(self, v):
        return self.factor @ (self.factor.T @ v)

    def dense(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def restrict(self, idx) -> "LowRankStiffness":
        return LowRankStiffness(self.factor[idx])


class _Model:
    form: str = ""

    def _prep(self, u):
        u = np.asarray(u, dtype=np.float64)
        single = u.ndim == 1
        U = u[None, :] if single else u
        if U.ndim != 2 or U.shape[1] != self.n_interface:
            raise ValueError(f"{self.form}: input has shape {u.shape}, expected "
                             f"({self.n_interface},) or (batch, {self.n_interface})")
        if not np.all(np.isfinite(U)):
            raise ValueError(f"{self.form}: non-finite input")
        return U, single

    @property
    def n_interface(self) -> int:
        return self.f0.size

    def evaluate(self, u):
        U, single = self._prep(u)
        out = self._eval(U) + self.f0
        return out[0] if single else out


@dataclass(frozen=True, eq=False)
class LlsModel(_Model):
    phi_f: PodBasis
    phi_u: PodBasis
    A_hat: np.ndarray
    f0: np.ndarray
    dof_order: Tuple[Tuple[int, int], ...] = ()
    form = "lls"

    def __post_init__(self):
        A = np.asarray(self.A_hat, dtype=np.float64)
        if A.shape != (self.phi_f.K, self.phi_u.K):
            raise ValueError(f"A_hat shape {A.shape} does not match bases "
                             f"({self.phi_f.K}, {self.phi_u.K})")
        _check_rows(self, self.phi_f, self.phi_u)
        object.__setattr__(self, "A_hat", A)

    def _eval(self, U):
        return (U @ self.phi_u.columns) @ self.A_hat.T @ self.phi_f.columns.T

    def linear_operator(self) -> np.ndarray:
        return self.phi_f.columns @ self.A_hat @ self.phi_u.columns.T


@dataclass(frozen=True, eq=False)
class SpsdLlsModel(_Model):
    phi_star: PodBasis
    L_hat: np.ndarray
    f0: np.ndarray
    dof_order: Tuple[Tuple[int, int], ...] = ()
    form = "spsd-lls"

    def __post_init__(self):
        L = np.asarray(self.L_hat, dtype=np.float64)
        k = self.phi_star.K
        if L.shape != (k, k):
            raise ValueError(f"L_hat shape {L.shape}, expected ({k}, {k})")
        if np.any(np.triu(L, 1) != 0):
            raise ValueError("L_hat must be lower triangular")
        _check_rows(self, self.phi_star)
        object.__setattr__(self, "L_hat", L)

    def _eval(self, U):
        X = U @ self.phi_star.columns
        return ((X @ self.L_hat) @ self.L_hat.T) @ self.phi_star.columns.T

    def reduced_factor(self, x=None) -> np.ndarray:
        return self.L_hat


@dataclass(frozen=True, eq=False)
class NnModel(_Model):
    phi_f: PodBasis
    phi_u: PodBasis
    theta: np.ndarray
    dims: Tuple[int, ...]
    f0: np.ndarray
    in_scale: float = 1.0
    out_scale: float = 1.0
    dof_order: Tuple[Tuple[int, int], ...] = ()
    form = "nn"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if dims[0] != self.phi_u.K or dims[-1] != self.phi_f.K:
            raise ValueError(f"network dims {dims} do not match bases K_u={self.phi_u.K}, "
                             f"K_f={self.phi_f.K}")
        _finish_net(self, dims)
        _check_rows(self, self.phi_f, self.phi_u)

    @property
    def layers(self):
        return theta_layers(self.theta, self.dims)

    def _eval(self, U):
        X = (U @ self.phi_u.columns) / self.in_scale
        Y = kernels.mlp_forward(self.theta, self.dims, np.ascontiguousarray(X))
        return (self.out_scale * Y) @ self.phi_f.columns.T


@dataclass(frozen=True, eq=False)
class SpsdNnModel(_Model):
    phi_star: PodBasis
    theta: np.ndarray
    dims: Tuple[int, ...]
    f0: np.ndarray
    in_scale: float = 1.0
    out_scale: float = 1.0
    dof_order: Tuple[Tuple[int, int], ...] = ()
    form = "spsd-nn"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        k = self.phi_star.K
        if dims[0] != k or dims[-1] != tril_size(k):
            raise ValueError(f"network dims {dims} do not match K*={k}")
        _finish_net(self, dims)
        _check_rows(self, self.phi_star)

    @property
    def layers(self):
        return theta_layers(self.theta, self.dims)

    def reduced_factor(self, x) -> np.ndarray:
        """Physical lower-triangular factor(s) at reduced coordinates ``x``."""
        x = np.asarray(x, dtype=np.float64)
        X = np.atleast_2d(x) / self.in_scale
        packed = kernels.mlp_forward(self.theta, self.dims, np.ascontiguousarray(X))
        L = np.sqrt(self.out_scale / self.in_scale) * unpack_tril(packed, self.phi_star.K)
        return L[0] if x.ndim == 1 else L

    def _eval(self, U):
        X = U @ self.phi_star.columns
        L = self.reduced_factor(X)
        v = np.einsum("nji,nj->ni", L, X)
        return np.einsum("nij,nj->ni", L, v) @ self.phi_star.columns.T


MODEL_TYPES = (LlsModel, SpsdLlsModel, NnModel, SpsdNnModel)


def _finish_net(model, dims):
    theta = np.ascontiguousarray(model.theta, dtype=np.float64)
    if theta.size != n_params(dims):
        raise ValueError(f"parameter vector has {theta.size} entries, dims {dims} need "
                         f"{n_params(dims)}")
    if not (model.in_scale > 0 and model.out_scale > 0):
        raise ValueError("normalization scales must be positive")
    object.__setattr__(model, "dims", dims)
    object.__setattr__(model, "theta", theta)
    object.__setattr__(model, "in_scale", float(model.in_scale))
    object.__setattr__(model, "out_scale", float(model.out_scale))


def _check_rows(model, *bases):
    f0 = np.asarray(model.f0, dtype=np.float64)
    for b in bases:
        if b.rows != f0.size:
            raise ValueError(f"basis has {b.rows} rows but f0 has length {f0.size}")
    object.__setattr__(model, "f0", f0)
    object.__setattr__(model, "dof_order", tuple(tuple(int(v) for v in p) for p in model.dof_order))
    if model.dof_order and len(model.dof_order) != f0.size:
        raise ValueError("dof_order length does not match the interface size")


def evaluate(model, u_gamma):
    """Interface force predicted by ``model``."""
    return model.evaluate(u_gamma)


def fd_step(u) -> float:
    return 1e-6 * max(1.0, float(np.max(np.abs(u))) if np.size(u) else 1.0)


def stiffness(model, u_gamma):
    """Interface stiffness at ``u_gamma``.

    SPSD forms return :class:`LowRankStiffness` with factor ``Phi* L``, the
    secant stiffness for which ``evaluate(u) = K u + f0``.  Direct forms
    return the dense central-difference Jacobian of ``evaluate``, which is in
    general not symmetric.
    """
    u, _ = model._prep(u_gamma)
    u = u[0]
    if model.form in ("spsd-lls", "spsd-nn"):
        x = model.phi_star.columns.T @ u
        return LowRankStiffness(model.phi_star.columns @ model.reduced_factor(x))
    n = u.size
    h = fd_step(u)
    E = h * np.eye(n)
    fp = model.evaluate(u[None, :] + E)
    fm = model.evaluate(u[None, :] - E)
    return ((fp - fm) / (2.0 * h)).T


# ---------------------------------------------------------------- file format

def _arrays(model) -> Dict[str, np.ndarray]:
    if model.form == "lls":
        a = {"phi_f": model.phi_f.columns, "phi_f_sv": model.phi_f.singular_values,
             "phi_u": model.phi_u.columns, "phi_u_sv": model.phi_u.singular_values,
             "A_hat": model.A_hat}
    elif model.form == "spsd-lls":
        a = {"phi_star": model.phi_star.columns, "phi_star_sv": model.phi_star.singular_values,
             "L_hat": model.L_hat}
    elif model.form == "nn":
        a = {"phi_f": model.phi_f.columns, "phi_f_sv": model.phi_f.singular_values,
             "phi_u": model.phi_u.columns, "phi_u_sv": model.phi_u.singular_values,
             "theta": model.theta}
    else:
        a = {"phi_star": model.phi_star.columns, "phi_star_sv": model.phi_star.singular_values,
             "theta": model.theta}
    a["f0"] = model.f0
    return a


def serialize(model) -> bytes:
    """Magic, header length (u64), JSON header, float64 payload, sha256."""
    arrays = _arrays(model)
    head = {
        "form": model.form,
        "version": FORMAT_VERSION,
        "n_interface": model.n_interface,
        "dof_order": [list(p) for p in model.dof_order],
        "arrays": [[k, list(v.shape)] for k, v in arrays.items()],
        "tril_packing": "row-major, row >= col",
    }
    if model.form in ("nn", "spsd-nn"):
        head.update(dims=list(model.dims), in_scale=model.in_scale, out_scale=model.out_scale)
    if model.form in ("spsd-lls", "spsd-nn"):
        head["replaced_columns"] = list(model.phi_star.replaced)
    hb = json.dumps(head, sort_keys=True).encode()
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    body = _MAGIC + struct.pack("<Q", len(hb)) + hb + payload
    return body + hashlib.sha256(body).digest()


def deserialize(data: bytes):
    if len(data) < len(_MAGIC) + 8 + 32 or not data.startswith(_MAGIC):
        raise ModelFileError("not a surrogate model file (bad magic or too short)")
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        head = json.loads(data[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ChecksumError("model header unreadable; file truncated or corrupted") from None
    version = head.get("version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"model file version {version!r} is not supported (this build reads {FORMAT_VERSION})")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("model file checksum mismatch; file truncated or corrupted")
    raw = np.frombuffer(body[16 + hlen:], dtype="<f8")
    arrays, pos = {}, 0
    for name, shape in head["arrays"]:
        size = int(np.prod(shape)) if shape else 1
        arrays[name] = raw[pos:pos + size].reshape(shape).astype(np.float64)
        pos += size
    if pos != raw.size:
        raise ModelFileError("payload length does not match header")
    form = head["form"]
    dof = [tuple(p) for p in head["dof_order"]]
    f0 = arrays["f0"]

    def basis(name):
        rep = head.get("replaced_columns", ()) if name == "phi_star" else ()
        return PodBasis(arrays[name], arrays[name + "_sv"], rep)

    if form == "lls":
        return LlsModel(basis("phi_f"), basis("phi_u"), arrays["A_hat"], f0, dof)
    if form == "spsd-lls":
        return SpsdLlsModel(basis("phi_star"), arrays["L_hat"], f0, dof)
    if form == "nn":
        return NnModel(basis("phi_f"), basis("phi_u"), arrays["theta"], tuple(head["dims"]), f0,
                       head["in_scale"], head["out_scale"], dof)
    if form == "spsd-nn":
        return SpsdNnModel(basis("phi_star"), arrays["theta"], tuple(head["dims"]), f0,
                           head["in_scale"], head["out_scale"], dof)
    raise ModelFileError(f"unknown model form {form!r}; valid forms are {', '.join(FORMS)}")


def save_model(path, model):
    Path(path).write_bytes(serialize(model))


def load_model(path):
    return deserialize(Path(path).read_bytes())
