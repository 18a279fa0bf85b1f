"""Linear small-strain elasticity with penalty gap springs.

The continuum part is linear, so element stiffness matrices are integrated
once per :class:`Assembler` and the global matrix is cached.  Gap springs
add a piecewise-linear internal force and its tangent on top.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import DofMap, Mesh
from .solvers import NewtonOptions, NewtonReport, newton_cg

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Material:
    youngs_modulus: float
    poisson_ratio: float = 0.0
    area: float = 1.0          # cross-section, used by line elements only

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (-1, 0.5)")
        if not self.area > 0:
            raise ValueError("area must be positive")


@dataclass(frozen=True)
class GapSpring:
    """Compression-only penalty link between two nodes.

    With ``d = (u_b - u_a) . direction`` the spring carries force
    ``stiffness * max(d - gap, 0)`` along ``direction``, pushing b forward
    and a backward.
    """
    node_pair: Tuple[int, int]
    direction: Tuple[float, ...]
    gap: float
    stiffness: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if not np.isclose(np.linalg.norm(d), 1.0, atol=1e-12):
            raise ValueError("spring direction must be a unit vector")
        if self.gap < 0 or self.stiffness < 0:
            raise ValueError("gap and stiffness must be non-negative")
        if self.node_pair[0] == self.node_pair[1]:
            raise ValueError("spring must connect two distinct nodes")
        object.__setattr__(self, "node_pair", tuple(int(i) for i in self.node_pair))
        object.__setattr__(self, "direction", tuple(float(x) for x in d))

    def opening(self, u: np.ndarray, dofmap: DofMap) -> float:
        a, b = self.node_pair
        n = np.asarray(self.direction)
        return float((u[dofmap.node_dofs([b])] - u[dofmap.node_dofs([a])]) @ n)

    def force(self, u, dofmap) -> float:
        return self.stiffness * max(self.opening(u, dofmap) - self.gap, 0.0)


@dataclass
class LoadCase:
    dirichlet: Dict[int, float]
    body_force: Optional[np.ndarray] = None
    pseudo_time: float = 0.0

    def dirichlet_arrays(self):
        dofs = np.asarray(sorted(self.dirichlet), dtype=np.int64)
        vals = np.asarray([self.dirichlet[d] for d in dofs], dtype=np.float64)
        return dofs, vals

    def external_force(self, n_dofs):
        if self.body_force is None:
            return np.zeros(n_dofs)
        f = np.asarray(self.body_force, dtype=np.float64)
        if f.shape != (n_dofs,):
            raise ValueError(f"body force has shape {f.shape}, expected ({n_dofs},)")
        return f


MaterialSpec = Union[Material, Sequence[Material]]


def element_properties(mesh: Mesh, materials: MaterialSpec):
    if isinstance(materials, Material):
        materials = [materials] * mesh.n_elements
    if len(materials) != mesh.n_elements:
        raise ValueError("need one material per element")
    E = np.array([m.youngs_modulus for m in materials])
    nu = np.array([m.poisson_ratio for m in materials])
    A = np.array([m.area for m in materials])
    return E, nu, A


def element_stiffness(element: int, material: Material, mesh: Mesh) -> np.ndarray:
    conn = mesh.elements[element]
    X = mesh.nodes[conn]
    if mesh.dimension == 1:
        h = float(X[1, 0] - X[0, 0])
        if h <= 0:
            raise ValueError(f"element {element}: non-positive length")
        k = material.area * material.youngs_modulus / h
        return k * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return kernels.hex_stiffness_batch(X[None], material.youngs_modulus,
                                       material.poisson_ratio)[0]


def _element_matrices(mesh, E, nu, A, elements):
    X = mesh.nodes[mesh.elements[elements]]
    if mesh.dimension == 1:
        h = X[:, 1, 0] - X[:, 0, 0]
        if np.any(h <= 0):
            raise ValueError(f"element {elements[np.argmax(h <= 0)]}: non-positive length")
        k = A[elements] * E[elements] / h
        return k[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    return kernels.hex_stiffness_batch(X, E[elements], nu[elements])


class Assembler:
    """Internal force and tangent for a set of elements plus gap springs.

    Parameters
    ----------
    mesh, materials
        ``materials`` is one :class:`Material` or one per mesh element.
    springs
        Gap springs included in this assembly.
    elements
        Subset of element indices to assemble (default all).
    """

    def __init__(self, mesh: Mesh, materials: MaterialSpec, springs: Sequence[GapSpring] = (),
                 elements: Optional[Sequence[int]] = None):
        self.mesh = mesh
        self.dofmap = DofMap.for_mesh(mesh)
        self.springs = tuple(springs)
        self.E, self.nu, self.A = element_properties(mesh, materials)
        self.elements = (np.arange(mesh.n_elements) if elements is None
                         else np.asarray(sorted(elements), dtype=np.int64))
        for s in self.springs:
            if max(s.node_pair) >= mesh.n_nodes:
                raise ValueError("spring node out of range")
            if len(s.direction) != mesh.dimension:
                raise ValueError("spring direction has wrong dimension")
        self._K = None

    @property
    def n_dofs(self) -> int:
        return self.dofmap.total_dofs

    @property
    def linear_stiffness(self) -> sp.csr_matrix:
        if self._K is None:
            n = self.n_dofs
            if self.elements.size == 0:
                self._K = sp.csr_matrix((n, n))
            else:
                Ke = _element_matrices(self.mesh, self.E, self.nu, self.A, self.elements)
                edofs = self.dofmap.element_dofs(self.mesh)[self.elements]
                nd = edofs.shape[1]
                rows = np.repeat(edofs, nd, axis=1).ravel()
                cols = np.tile(edofs, (1, nd)).ravel()
                K = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
                K.sum_duplicates()
                # exact symmetry; integration leaves roundoff asymmetry
                self._K = ((K + K.T) * 0.5).tocsr()
        return self._K

    def _spring_terms(self, u, with_tangent=True):
        n = self.n_dofs
        f = np.zeros(n)
        rows, cols, vals = [], [], []
        for s in self.springs:
            a, b = s.node_pair
            da = self.dofmap.node_dofs([a])
            db = self.dofmap.node_dofs([b])
            d = np.asarray(s.direction)
            opening = float((u[db] - u[da]) @ d)
            if opening >= s.gap:            # the kink itself takes the closed branch
                force = s.stiffness * (opening - s.gap)
                f[db] += force * d
                f[da] -= force * d
                if with_tangent:
                    kd = s.stiffness * np.outer(d, d)
                    for (ri, rs), (ci, cs) in [((da, -1), (da, -1)), ((da, -1), (db, 1)),
                                               ((db, 1), (da, -1)), ((db, 1), (db, 1))]:
                        rows.append(np.repeat(ri, len(ci)))
                        cols.append(np.tile(ci, len(ri)))
                        vals.append((rs * cs * kd).ravel())
        T = None
        if with_tangent:
            if rows:
                T = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(n, n)).tocsr()
            else:
                T = sp.csr_matrix((n, n))
        return f, T

    def internal_force(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.n_dofs,):
            raise ValueError(f"state has length {u.shape}, expected {self.n_dofs}")
        f = self.linear_stiffness @ u
        if self.springs:
            f = f + self._spring_terms(u, with_tangent=False)[0]
        return f

    def assemble(self, u: np.ndarray):
        u = np.asarray(u, dtype=np.float64)
        if u.shape != (self.n_dofs,):
            raise ValueError(f"state has length {u.shape}, expected {self.n_dofs}")
        K = self.linear_stiffness
        if not self.springs:
            return K @ u, K
        fs, Ts = self._spring_terms(u)
        return K @ u + fs, (K + Ts).tocsr()

    def energy(self, u, f_ext):
        e = 0.5 * u @ (self.linear_stiffness @ u) - f_ext @ u
        for s in self.springs:
            g = max(s.opening(u, self.dofmap) - s.gap, 0.0)
            e += 0.5 * s.stiffness * g * g
        return float(e)


def assemble(mesh, dofmap, material, gap_springs, state):
    """Return ``(internal_force, tangent)`` for the whole mesh at ``state``."""
    asm = Assembler(mesh, material, gap_springs)
    if dofmap.total_dofs != asm.n_dofs:
        raise ValueError("dof map does not match mesh")
    return asm.assemble(state)


@dataclass
class SolveResult:
    state: np.ndarray
    reactions: np.ndarray          # full-length; nonzero only on Dirichlet dofs
    report: NewtonReport = field(default_factory=NewtonReport)


def solve_monolithic(mesh, dofmap, material, gap_springs, load: LoadCase,
                     opts: Optional[NewtonOptions] = None, initial=None,
                     assembler: Optional[Assembler] = None) -> SolveResult:
    """Newton-CG solve of the full problem for one load case.

    Dirichlet rows and columns are eliminated; reactions are recovered as
    ``f_int - f_ext`` on the constrained dofs.
    """
    opts = opts or NewtonOptions(line_search=True)
    asm = assembler or Assembler(mesh, material, gap_springs)
    if dofmap is not None and dofmap.total_dofs != asm.n_dofs:
        raise ValueError("dof map does not match mesh")
    n = asm.n_dofs
    ddofs, dvals = load.dirichlet_arrays()
    free = np.setdiff1d(np.arange(n), ddofs)
    f_ext = load.external_force(n)
    u0 = np.zeros(n) if initial is None else np.array(initial, dtype=np.float64)
    u0[ddofs] = dvals

    def residual(u):
        return asm.internal_force(u) - f_ext

    def tangent(u):
        return asm.assemble(u)[1][free][:, free]

    scale = max(float(np.linalg.norm(f_ext[free])), float(np.linalg.norm(asm.internal_force(u0))))
    u, rep = newton_cg(residual, tangent, u0, free, opts,
                       energy=lambda v: asm.energy(v, f_ext), force_scale=scale,
                       label="monolithic tangent")
    reactions = np.zeros(n)
    reactions[ddofs] = residual(u)[ddofs]
    return SolveResult(u, reactions, rep)


def consistent_body_force(mesh: Mesh, density, elements=None) -> np.ndarray:
    """Nodal loads for a uniform body force density over ``elements``.

    ``density`` is force per unit length (1D) or a 3-vector of force per
    unit volume (3D).
    """
    dm = DofMap.for_mesh(mesh)
    f = np.zeros(dm.total_dofs)
    els = np.arange(mesh.n_elements) if elements is None else np.asarray(elements)
    density = np.atleast_1d(np.asarray(density, dtype=np.float64))
    for e in els:
        conn = mesh.elements[e]
        X = mesh.nodes[conn]
        if mesh.dimension == 1:
            share = np.full(2, 0.5 * float(X[1, 0] - X[0, 0]))
        else:
            share = _hex_node_volumes(X)
        for a, node in enumerate(conn):
            f[dm.node_dofs([node])] += share[a] * density
    return f


def _hex_node_volumes(X):
    from ._pykernels import HEX_SIGNS, _DN, GAUSS
    vols = np.zeros(8)
    for g in range(8):
        xi = HEX_SIGNS[g] * GAUSS
        N = np.prod(1.0 + HEX_SIGNS * xi, axis=1) / 8.0
        det = np.linalg.det(_DN[g].T @ X)
        vols += N * det
    return vols


def save_state(path, values: np.ndarray) -> Path:
    """Write ``path`` (float64 little-endian) and ``path.json`` sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(values, dtype="<f8").tobytes()
    path.write_bytes(data)
    side = {"total_dofs": int(len(values)), "checksum": hashlib.sha256(data).hexdigest()}
    Path(str(path) + ".json").write_text(json.dumps(side, sort_keys=True) + "\n")
    return path


def load_state(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    side = json.loads(Path(str(path) + ".json").read_text())
    if hashlib.sha256(data).hexdigest() != side["checksum"]:
        raise ValueError(f"{path}: checksum mismatch")
    vals = np.frombuffer(data, dtype="<f8").copy()
    if vals.size != side["total_dofs"]:
        raise ValueError(f"{path}: expected {side['total_dofs']} values, found {vals.size}")
    return vals
