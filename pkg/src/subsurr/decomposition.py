"""Outer/inner split, interface force extraction and the exact linear closure."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse.linalg as spla

from .fem import Assembler, GapSpring, MaterialSpec
from .mesh import DofMap, Mesh


@dataclass(frozen=True)
class Decomposition:
    n_dofs: int
    dofs_per_node: int
    inner_elements: np.ndarray
    outer_elements: np.ndarray
    interface_nodes: np.ndarray
    interface_dofs: np.ndarray
    inner_interior_dofs: np.ndarray
    outer_dofs: np.ndarray
    dirichlet_dofs: np.ndarray
    inner_nodes: np.ndarray

    @property
    def dof_order(self) -> List[Tuple[int, int]]:
        d = self.dofs_per_node
        return [(int(i) // d, int(i) % d) for i in self.interface_dofs]

    @property
    def n_interface(self) -> int:
        return self.interface_dofs.size

    @property
    def coupled_free_dofs(self) -> np.ndarray:
        """Unknowns of the coarse problem: outer plus interface dofs."""
        return np.union1d(self.outer_dofs, self.interface_dofs)


def build_decomposition(mesh: Mesh, inner_elements: Sequence[int], interface_nodes: Sequence[int],
                        dirichlet_dofs: Sequence[int]) -> Decomposition:
    dm = DofMap.for_mesh(mesh)
    inner = np.asarray(sorted(inner_elements), dtype=np.int64)
    mask = np.zeros(mesh.n_elements, dtype=bool)
    mask[inner] = True
    outer = np.flatnonzero(~mask)
    in_nodes = np.zeros(mesh.n_nodes, dtype=bool)
    in_nodes[mesh.elements[inner].ravel()] = True
    out_nodes = np.zeros(mesh.n_nodes, dtype=bool)
    out_nodes[mesh.elements[outer].ravel()] = True
    iface = np.asarray(sorted(interface_nodes), dtype=np.int64)
    if not np.array_equal(iface, np.flatnonzero(in_nodes & out_nodes)):
        raise ValueError("interface nodes do not match the shared nodes of the element split")
    dirichlet = np.asarray(sorted(set(int(d) for d in dirichlet_dofs)), dtype=np.int64)
    iface_dofs = dm.node_dofs(iface)
    if np.intersect1d(iface_dofs, dirichlet).size:
        raise ValueError("interface dofs may not carry Dirichlet conditions")
    interior = dm.node_dofs(np.flatnonzero(in_nodes & ~out_nodes))
    outer_only = dm.node_dofs(np.flatnonzero(out_nodes & ~in_nodes))
    return Decomposition(
        n_dofs=dm.total_dofs,
        dofs_per_node=dm.dofs_per_node,
        inner_elements=inner,
        outer_elements=outer,
        interface_nodes=iface,
        interface_dofs=iface_dofs,
        inner_interior_dofs=np.setdiff1d(interior, dirichlet),
        outer_dofs=np.setdiff1d(outer_only, dirichlet),
        dirichlet_dofs=dirichlet,
        inner_nodes=np.flatnonzero(in_nodes),
    )


def check_inner_springs(decomp: Decomposition, springs: Sequence[GapSpring]):
    for s in springs:
        if not np.all(np.isin(s.node_pair, decomp.inner_nodes)):
            raise ValueError(f"gap spring {s.node_pair} is not inside the inner domain")


class InnerDomain:
    """Assembly restricted to the inner elements and inner springs."""

    def __init__(self, decomp: Decomposition, mesh: Mesh, materials: MaterialSpec,
                 springs: Sequence[GapSpring] = ()):
        if DofMap.for_mesh(mesh).total_dofs != decomp.n_dofs:
            raise ValueError("decomposition does not belong to this mesh")
        check_inner_springs(decomp, springs)
        self.decomp = decomp
        self.asm = Assembler(mesh, materials, springs, elements=decomp.inner_elements)

    def interface_force(self, state):
        return self.asm.internal_force(state)[self.decomp.interface_dofs]


def interface_internal_force(decomp, mesh, material, gap_springs, state) -> np.ndarray:
    """Force exerted by the inner domain on each interface dof."""
    return InnerDomain(decomp, mesh, material, gap_springs).interface_force(state)


def schur_closure(decomp: Decomposition, mesh: Mesh, material: MaterialSpec,
                  body_force: Optional[np.ndarray] = None):
    """Exact interface map of a linear inner domain.

    Returns ``(K, g0)`` with ``F = K u_gamma + g0`` for the inner domain in
    equilibrium with interface trace ``u_gamma`` and nodal loads
    ``body_force`` on its interior dofs.
    """
    K = Assembler(mesh, material, (), elements=decomp.inner_elements).linear_stiffness
    G, Id = decomp.interface_dofs, decomp.inner_interior_dofs
    Kgg = K[G][:, G].toarray()
    if Id.size == 0:
        return 0.5 * (Kgg + Kgg.T), np.zeros(G.size)
    Kii = K[Id][:, Id].tocsc()
    Kig = K[Id][:, G].toarray()
    try:
        lu = spla.splu(Kii)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"inner interior block is singular: {exc}") from None
    X = lu.solve(Kig)
    if not np.all(np.isfinite(X)):
        raise np.linalg.LinAlgError("inner interior block is singular")
    S = Kgg - Kig.T @ X
    S = 0.5 * (S + S.T)
    g0 = np.zeros(G.size)
    if body_force is not None:
        bi = np.asarray(body_force, dtype=np.float64)[Id]
        g0 = Kig.T @ lu.solve(bi)
    return S, g0


@dataclass
class SnapshotSet:
    U: np.ndarray                     # (n_interface, n_snapshots)
    F: np.ndarray
    f0: np.ndarray
    dof_order: List[Tuple[int, int]]
    provenance: List[Tuple[int, float]] = field(default_factory=list)

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.F = np.asarray(self.F, dtype=np.float64)
        self.f0 = np.asarray(self.f0, dtype=np.float64)
        if self.U.shape != self.F.shape:
            raise ValueError("U and F must have the same shape")
        if self.f0.shape != (self.U.shape[0],):
            raise ValueError("f0 length must equal the interface dof count")
        if self.provenance and len(self.provenance) != self.U.shape[1]:
            raise ValueError("provenance must have one entry per column")
        self.dof_order = [tuple(int(v) for v in p) for p in self.dof_order]

    @property
    def n_snapshots(self) -> int:
        return self.U.shape[1]

    @property
    def F_star(self) -> np.ndarray:
        return self.F - self.f0[:, None]

    def header(self) -> dict:
        return {
            "interface_dofs": int(self.U.shape[0]),
            "n_snapshots": int(self.n_snapshots),
            "f0": [float(x) for x in self.f0],
            "dof_order": [list(p) for p in self.dof_order],
            "provenance": [[int(a), float(b)] for a, b in self.provenance],
        }

    def save(self, stem) -> Path:
        """Write ``stem.bin`` (U then F, column-major float64) and ``stem.json``."""
        stem = Path(stem)
        payload = (np.asfortranarray(self.U, dtype="<f8").tobytes(order="F")
                   + np.asfortranarray(self.F, dtype="<f8").tobytes(order="F"))
        stem.with_suffix(".bin").write_bytes(payload)
        head = self.header()
        head["checksum"] = hashlib.sha256(payload).hexdigest()
        stem.with_suffix(".json").write_text(json.dumps(head, sort_keys=True, indent=1) + "\n")
        return stem.with_suffix(".json")

    @classmethod
    def load(cls, stem) -> "SnapshotSet":
        stem = Path(stem)
        head = json.loads(stem.with_suffix(".json").read_text())
        payload = stem.with_suffix(".bin").read_bytes()
        if hashlib.sha256(payload).hexdigest() != head["checksum"]:
            raise ValueError(f"{stem}: snapshot checksum mismatch")
        m, n = head["interface_dofs"], head["n_snapshots"]
        data = np.frombuffer(payload, dtype="<f8")
        if data.size != 2 * m * n:
            raise ValueError(f"{stem}: payload size does not match header")
        U = data[:m * n].reshape((m, n), order="F").copy()
        F = data[m * n:].reshape((m, n), order="F").copy()
        return cls(U, F, np.asarray(head["f0"]), [tuple(p) for p in head["dof_order"]],
                   [(int(a), float(b)) for a, b in head["provenance"]])
