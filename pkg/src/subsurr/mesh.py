"""Structured meshes, dof numbering and node sets.

Two generators are provided: a 1D bar of two-node line elements and a 3D
box of eight-node trilinear hexahedra.  Node ordering is lexicographic in
(x3, x2, x1) grid index so dof numbering is reproducible run to run.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    dimension: int
    nodes: np.ndarray          # (n_nodes, dimension)
    elements: np.ndarray       # (n_elements, 2 or 8), int64
    node_sets: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=np.float64)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "elements", elements)
        sets = {k: np.asarray(sorted(set(int(i) for i in v)), dtype=np.int64)
                for k, v in self.node_sets.items()}
        object.__setattr__(self, "node_sets", sets)
        nodes.flags.writeable = False
        elements.flags.writeable = False
        for v in sets.values():
            v.flags.writeable = False
        self._validate()

    def _validate(self):
        if self.dimension not in (1, 3):
            raise MeshError(f"dimension must be 1 or 3, got {self.dimension}")
        if self.nodes.shape[1] != self.dimension:
            raise MeshError("node coordinate width does not match dimension")
        n = self.n_nodes
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= n):
            raise MeshError("element references a node index out of range")
        for e in self.elements:
            if len(set(e.tolist())) != len(e):
                raise MeshError(f"element {e.tolist()} repeats a node")
        for name, ids in self.node_sets.items():
            if ids.size and (ids[0] < 0 or ids[-1] >= n):
                raise MeshError(f"node set {name!r} references an invalid node")

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def nodes_per_element(self) -> int:
        return self.elements.shape[1]

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    def to_json(self) -> str:
        data = {
            "dimension": self.dimension,
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "node_sets": {k: v.tolist() for k, v in sorted(self.node_sets.items())},
        }
        return json.dumps(data, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        data = json.loads(text)
        return cls(
            dimension=int(data["dimension"]),
            nodes=np.asarray(data["nodes"], dtype=np.float64),
            elements=np.asarray(data["elements"], dtype=np.int64),
            node_sets={k: np.asarray(v, dtype=np.int64) for k, v in data["node_sets"].items()},
        )


@dataclass(frozen=True)
class DofMap:
    """Node-major dof numbering: dof = dofs_per_node * node + component."""
    dofs_per_node: int
    n_nodes: int

    @classmethod
    def for_mesh(cls, mesh: Mesh) -> "DofMap":
        return cls(dofs_per_node=mesh.dimension, n_nodes=mesh.n_nodes)

    @property
    def total_dofs(self) -> int:
        return self.dofs_per_node * self.n_nodes

    def dof(self, node, component=0):
        if not 0 <= component < self.dofs_per_node:
            raise IndexError(f"component {component} out of range")
        return self.dofs_per_node * np.asarray(node) + component

    def node_dofs(self, nodes: Sequence[int]) -> np.ndarray:
        """All dofs of ``nodes`` ordered by (node, component)."""
        nodes = np.asarray(nodes, dtype=np.int64)
        d = self.dofs_per_node
        return (d * nodes[:, None] + np.arange(d)[None, :]).ravel()

    def element_dofs(self, mesh: Mesh) -> np.ndarray:
        d = self.dofs_per_node
        conn = mesh.elements
        return (d * conn[:, :, None] + np.arange(d)[None, None, :]).reshape(conn.shape[0], -1)


def build_bar(n_elements: int, length: float) -> Mesh:
    if int(n_elements) != n_elements or n_elements < 2:
        raise MeshError(f"a bar needs at least 2 elements, got {n_elements}")
    if not length > 0:
        raise MeshError("length must be positive")
    n_elements = int(n_elements)
    x = np.linspace(0.0, float(length), n_elements + 1)
    conn = np.column_stack([np.arange(n_elements), np.arange(1, n_elements + 1)])
    return Mesh(1, x[:, None], conn, {"left": [0], "right": [n_elements]})


def _box_node(i, j, k, n):
    return (k * (n + 1) + j) * (n + 1) + i


def build_box(n_cells_per_side: int, half_width: float) -> Mesh:
    """Hex mesh of the cube [-half_width, half_width]^3.

    Element connectivity follows the usual trilinear ordering: the bottom
    face counter-clockwise, then the top face.
    """
    n = n_cells_per_side
    if int(n) != n or n < 3:
        raise MeshError(f"box needs at least 3 cells per side, got {n}")
    if not half_width > 0:
        raise MeshError("half_width must be positive")
    n = int(n)
    g = np.linspace(-half_width, half_width, n + 1)
    kk, jj, ii = np.meshgrid(np.arange(n + 1), np.arange(n + 1), np.arange(n + 1), indexing="ij")
    nodes = np.column_stack([g[ii.ravel()], g[jj.ravel()], g[kk.ravel()]])

    ck, cj, ci = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()
    corners = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
               (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]
    conn = np.column_stack([_box_node(ci + a, cj + b, ck + c, n) for a, b, c in corners])

    layer = (n + 1) ** 2
    bottom = np.arange(layer)
    top = np.arange(n * layer, (n + 1) * layer)
    return Mesh(3, nodes, conn, {"bottom": bottom, "top": top})


def select_interior_block(mesh: Mesh, lo, hi) -> Tuple[List[int], List[int]]:
    """Split ``mesh`` into an inner block [lo, hi] and its complement.

    Returns the inner element indices and the interface nodes, i.e. nodes
    shared by at least one inner and one outer element.
    """
    dim = mesh.dimension
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))[:dim]
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))[:dim]
    bmin, bmax = mesh.bounding_box()
    scale = float(np.max(bmax - bmin))
    tol = 1e-9 * scale
    if np.any(lo >= hi):
        raise MeshError("block lower corner must be below its upper corner")
    if np.any(lo <= bmin + tol) or np.any(hi >= bmax - tol):
        raise MeshError("interior block touches the outer boundary")

    xe = mesh.nodes[mesh.elements]                       # (n_el, npe, dim)
    inside = np.all((xe >= lo - tol) & (xe <= hi + tol), axis=(1, 2))
    inner = np.flatnonzero(inside)
    if inner.size == 0:
        raise MeshError("interior block contains no elements")
    # every node on the block boundary must be claimed by some inner element
    # for the block to be face aligned
    on_faces = np.all((mesh.nodes >= lo - tol) & (mesh.nodes <= hi + tol), axis=1)
    inner_nodes = np.zeros(mesh.n_nodes, dtype=bool)
    inner_nodes[mesh.elements[inner].ravel()] = True
    if np.any(on_faces & ~inner_nodes):
        raise MeshError("interior block is not aligned with element faces")

    outer_nodes = np.zeros(mesh.n_nodes, dtype=bool)
    outer_nodes[mesh.elements[~inside].ravel()] = True
    interface = np.flatnonzero(inner_nodes & outer_nodes)
    return inner.tolist(), interface.tolist()
