"""Ready-made problems: 1D bar, linear cube, and a cube with gap contact.

Each exemplar bundles a mesh, the inner/outer split, materials, gap
springs, a loading function and training/testing trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .decomposition import Decomposition, InnerDomain, build_decomposition
from .fem import GapSpring, LoadCase, Material, consistent_body_force, solve_monolithic
from .mesh import DofMap, Mesh, build_bar, build_box, select_interior_block
from .training import TrajectorySpec

OUTER_STEEL = Material(28.5e6, 0.3)
INNER_STEEL = Material(29e6, 0.3)
# softer inner material of the contact exemplars; the gap springs supply
# the extra stiffness once they close
CLEARANCE_CORE = Material(5e6, 0.3)

EXEMPLARS = ("bar1d", "cube", "gap-contact", "gap-contact-preload")

CUBE_TEST = ((0.05, -0.01, -0.02, 0.01),
             (0.15, -0.10, -0.20, 0.15),
             (0.40, -0.10, -0.30, 0.10),
             (-0.30, -0.30, 0.50, -0.05))
CONTACT_TRAIN_BETA = tuple(-0.005 + 0.0005 * i for i in range(21))
CONTACT_TEST_BETA = (-0.005, -0.00475, -0.0045, -0.00425, -0.0025, -0.00125, -0.001,
                     -0.00025, 0.0)


@dataclass
class Exemplar:
    name: str
    mesh: Mesh
    decomp: Decomposition
    materials: List[Material]
    springs: Tuple[GapSpring, ...]
    load_fn: Callable[[TrajectorySpec, float], LoadCase]
    train_specs: List[TrajectorySpec]
    test_specs: List[TrajectorySpec]
    qoi: List[Tuple[str, int]]
    include_t0: bool = False
    reference_state: Optional[np.ndarray] = None
    f0: Optional[np.ndarray] = None
    info: Dict = field(default_factory=dict)

    @property
    def dofmap(self) -> DofMap:
        return DofMap.for_mesh(self.mesh)

    def load(self, spec: TrajectorySpec, t: float) -> LoadCase:
        return self.load_fn(spec, t)


def _top_bottom_loader(mesh: Mesh, channels, body_force=None):
    """Fixed bottom; top displaced by ``channels(spec, t) -> (u1, u2, u3)``."""
    dm = DofMap.for_mesh(mesh)
    bot = dm.node_dofs(mesh.node_sets["bottom"])
    top = dm.node_dofs(mesh.node_sets["top"]).reshape(-1, 3)

    def load(spec, t):
        d = dict.fromkeys(bot.tolist(), 0.0)
        vals = channels(spec, t)
        for c in range(3):
            d.update(dict.fromkeys(top[:, c].tolist(), float(vals[c])))
        return LoadCase(d, body_force=body_force, pseudo_time=t)

    return load, np.concatenate([bot, top.ravel()])


def bar1d(N: int = 10, length: float = 11.0, E: float = 1.0, area: float = 1.0,
          b: float = 1.0, n_steps: int = 10) -> Exemplar:
    """Bar with ``N`` interior nodes; the inner domain lies between nodes 2 and N-1.

    Trajectories scale the body load by ``t * parameters['scale']`` and pull
    the right end by ``t * parameters['right']``.  The body load acts on the
    outer domain only, so the inner map is exactly linear in the trace.
    """
    if N < 5:
        raise ValueError("need N >= 5")
    mesh = build_bar(N + 1, length)
    mat = Material(E, 0.0, area)
    inner = list(range(2, N - 1))
    dirichlet = [0, N + 1]
    decomp = build_decomposition(mesh, inner, [2, N - 1], dirichlet)
    unit = consistent_body_force(mesh, b)
    unit[decomp.inner_interior_dofs] = 0.0

    def load(spec, t):
        s = spec.parameters.get("scale", 1.0) * t
        return LoadCase({0: 0.0, N + 1: spec.parameters.get("right", 0.0) * t},
                        body_force=s * unit, pseudo_time=t)

    train = [TrajectorySpec({"scale": s, "right": r}, n_steps=n_steps)
             for s in (1.0, -0.5) for r in (0.0, 0.1)]
    test = [TrajectorySpec({"scale": 0.7, "right": 0.05}, n_steps=n_steps)]
    ex = Exemplar("bar1d", mesh, decomp, [mat] * mesh.n_elements, (), load, train, test,
                  [("left", 0)])
    ex.info["unit_body_force"] = unit
    return ex


def cube(n: int = 5, n_steps: int = 100, inner_half: float = 0.9) -> Exemplar:
    """Linear cube, fixed bottom, top displaced by two-stage cosine ramps."""
    mesh = build_box(n, 1.5)
    inner, iface = select_interior_block(mesh, [-inner_half] * 3, [inner_half] * 3)
    mats = [OUTER_STEEL] * mesh.n_elements
    for e in inner:
        mats[e] = INNER_STEEL

    def channels(spec, t):
        return spec.channel("b_x", t), 0.0, spec.channel("b_z", t)

    load, ddofs = _top_bottom_loader(mesh, channels)
    decomp = build_decomposition(mesh, inner, iface, ddofs)
    train = [TrajectorySpec({"b_x1": a, "b_x2": c, "b_z1": d, "b_z2": e}, n_steps=n_steps)
             for a in (-0.3, 0.3) for c in (-0.1, 0.1) for d in (-0.3, 0.3) for e in (-0.1, 0.1)]
    test = [TrajectorySpec({"b_x1": a, "b_x2": c, "b_z1": d, "b_z2": e}, n_steps=n_steps)
            for a, c, d, e in CUBE_TEST]
    return Exemplar("cube", mesh, decomp, mats, (), load, train, test,
                    [("bottom", 0), ("bottom", 2)])


def _contact_springs(mesh: Mesh, span: float, gap: float, stiffness: float):
    X = mesh.nodes
    cols = np.unique(np.round(X[np.abs(X[:, 0]) <= span + 1e-9, 0], 9))

    def node_at(p):
        i = int(np.argmin(np.sum((X - p) ** 2, axis=1)))
        if np.linalg.norm(X[i] - p) > 1e-9:
            raise ValueError(f"no node at {p}")
        return i

    out = []
    for x in cols:
        for y in cols:
            a, b = node_at([x, y, -span]), node_at([x, y, span])
            for s in (1.0, -1.0):
                out.append(GapSpring((a, b), (s, 0.0, 0.0), gap, stiffness))
    return tuple(out)


def gap_contact(n_steps: int = 50, gap_fraction: float = 0.6, spring_stiffness: float = 1e9,
                betas: Sequence[float] = CONTACT_TRAIN_BETA,
                test_betas: Sequence[float] = CONTACT_TEST_BETA) -> Exemplar:
    """Cube whose soft core is bridged by compression-only x1 gap springs.

    The top is pulled by ``u1 = beta t``, ``u3 = t / 400``.  Springs join
    the bottom and top faces of the inner block; the gap is set so that
    they close once ``|beta| t`` exceeds ``gap_fraction * 0.005``.
    """
    mesh = build_box(5, 1.5)
    inner, iface = select_interior_block(mesh, [-0.9] * 3, [0.9] * 3)
    mats = [OUTER_STEEL] * mesh.n_elements
    for e in inner:
        mats[e] = CLEARANCE_CORE

    def channels(spec, t):
        p = spec.parameters
        return p["beta"] * t, p.get("alpha", 0.0) * t, t / 400.0

    load, ddofs = _top_bottom_loader(mesh, channels)
    decomp = build_decomposition(mesh, inner, iface, ddofs)
    probe = _contact_springs(mesh, 0.9, 0.0, 0.0)
    ref = solve_monolithic(mesh, None, mats, (), load(TrajectorySpec({"beta": 0.005}), 1.0))
    dm = DofMap.for_mesh(mesh)
    max_open = max(s.opening(ref.state, dm) for s in probe)
    gap = gap_fraction * max_open
    springs = _contact_springs(mesh, 0.9, gap, spring_stiffness)
    train = [TrajectorySpec({"beta": b}, n_steps=n_steps) for b in betas]
    test = [TrajectorySpec({"beta": b}, n_steps=n_steps) for b in test_betas]
    ex = Exemplar("gap-contact", mesh, decomp, mats, springs, load, train, test,
                  [("bottom", 0), ("bottom", 2)])
    ex.info.update(gap=gap, spring_stiffness=spring_stiffness)
    return ex


def preload_force(mesh: Mesh, decomp: Decomposition, magnitude: float) -> np.ndarray:
    """Self-equilibrated axial squeeze on the inner-interior nodes.

    Nodes above the mid-plane are pushed down and nodes below pushed up,
    standing in for a tensioned fastener.
    """
    dm = DofMap.for_mesh(mesh)
    f = np.zeros(dm.total_dofs)
    z_dofs = decomp.inner_interior_dofs[decomp.inner_interior_dofs % 3 == 2]
    nodes = z_dofs // 3
    z = mesh.nodes[nodes, 2]
    up, down = z_dofs[z < 0], z_dofs[z > 0]
    if up.size == 0 or down.size == 0:
        raise ValueError("inner domain needs interior nodes on both sides of the mid-plane")
    f[up] = magnitude / up.size
    f[down] = -magnitude / down.size
    return f


def gap_contact_preload(n_steps: int = 10, preload: float = 2e4,
                        grid: Sequence[float] = (-0.005, -0.0025, 0.0, 0.0025, 0.005),
                        test: Sequence[float] = tuple(0.0005 + 0.001 * i for i in range(5)),
                        **kw) -> Exemplar:
    """Contact cube with an initial fastener preload and 3D radial pulls.

    Snapshots include ``t = 0``; surrogate inputs are measured from the
    preloaded state and ``f0`` is the preloaded interface force.
    """
    base = gap_contact(n_steps=n_steps, **kw)
    mesh, decomp = base.mesh, base.decomp
    fpre = preload_force(mesh, decomp, preload)
    inner_load = base.load_fn

    def load(spec, t):
        lc = inner_load(spec, t)
        return LoadCase(lc.dirichlet, body_force=fpre, pseudo_time=t)

    pre = solve_monolithic(mesh, None, base.materials, base.springs,
                           load(TrajectorySpec({"beta": 0.0}), 0.0))
    f0 = InnerDomain(decomp, mesh, base.materials, base.springs).interface_force(pre.state)
    train = [TrajectorySpec({"beta": b, "alpha": a}, n_steps=n_steps) for b in grid for a in grid]
    tests = [TrajectorySpec({"beta": v, "alpha": v}, n_steps=n_steps) for v in test]
    ex = Exemplar("gap-contact-preload", mesh, decomp, base.materials, base.springs, load,
                  train, tests, [("bottom", 0), ("bottom", 1), ("bottom", 2)], include_t0=True,
                  reference_state=pre.state, f0=f0)
    ex.info.update(base.info, preload=preload, preload_force=fpre,
                   preload_reactions=pre.reactions)
    return ex


def build(name: str, **kw) -> Exemplar:
    makers = {"bar1d": bar1d, "cube": cube, "gap-contact": gap_contact,
              "gap-contact-preload": gap_contact_preload}
    if name not in makers:
        raise ValueError(f"unknown exemplar {name!r}; choose from {', '.join(EXEMPLARS)}")
    return makers[name](**kw)
