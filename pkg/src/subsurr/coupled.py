"""Coarse-scale solve with a surrogate closing the removed inner domain.

Unknowns are the outer and interface dofs.  The residual is

    K_outer u + P^T M(u_gamma - u_ref) - f_ext

restricted to free dofs, where ``M`` is the surrogate and ``u_ref`` an
optional reference (e.g. preloaded) interface trace.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .decomposition import Decomposition
from .fem import Assembler, LoadCase, MaterialSpec
from .mesh import DofMap, Mesh
from .solvers import NewtonOptions, SpdViolationError, newton_cg
from .surrogates import LowRankStiffness, stiffness

log = logging.getLogger(__name__)


class ClosureMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class LinearClosure:
    """Exact linear interface map ``F = K u + g0`` (e.g. a Schur complement)."""
    K: np.ndarray
    g0: np.ndarray
    dof_order: tuple = ()
    form = "schur"

    @property
    def n_interface(self) -> int:
        return self.g0.size

    def evaluate(self, u):
        u = np.asarray(u, dtype=np.float64)
        return u @ self.K.T + self.g0

    def stiffness_matrix(self, u):
        return self.K


@dataclass
class CoupledProblem:
    """Outer-domain operators plus a surrogate on the interface.

    ``reference_state`` is a full-length state whose interface trace is
    subtracted from the surrogate input; it is also the default initial
    guess.  ``symmetrize`` replaces a direct model's finite-difference
    Jacobian by its symmetric part.
    """
    mesh: Mesh
    decomp: Decomposition
    material: MaterialSpec
    surrogate: object
    load: LoadCase
    opts: NewtonOptions = field(default_factory=NewtonOptions)
    reference_state: Optional[np.ndarray] = None
    initial: Optional[np.ndarray] = None
    symmetrize: bool = False
    record_tangents: bool = False

    def __post_init__(self):
        if self.surrogate.n_interface != self.decomp.n_interface:
            raise ClosureMismatchError(
                f"surrogate has {self.surrogate.n_interface} interface dofs, decomposition "
                f"has {self.decomp.n_interface}")
        order = tuple(getattr(self.surrogate, "dof_order", ()) or ())
        if order and tuple(map(tuple, order)) != tuple(self.decomp.dof_order):
            raise ClosureMismatchError("surrogate dof order does not match the interface dofs")
        self._asm = Assembler(self.mesh, self.material, (), elements=self.decomp.outer_elements)
        n = self._asm.n_dofs
        ddofs, _ = self.load.dirichlet_arrays()
        if np.intersect1d(ddofs, self.decomp.interface_dofs).size:
            raise ValueError("interface dofs may not be constrained")
        self.free = np.setdiff1d(self.decomp.coupled_free_dofs, ddofs)
        self._gpos = np.searchsorted(self.free, self.decomp.interface_dofs)
        self._ref = (np.zeros(n) if self.reference_state is None
                     else np.asarray(self.reference_state, dtype=np.float64))
        self._fext = self.load.external_force(n)

    @property
    def n_dofs(self) -> int:
        return self._asm.n_dofs

    @property
    def form(self) -> str:
        return getattr(self.surrogate, "form", type(self.surrogate).__name__)

    def surrogate_input(self, u):
        G = self.decomp.interface_dofs
        return u[G] - self._ref[G]

    def outer_force(self, u):
        return self._asm.internal_force(u)

    def residual(self, u):
        r = self.outer_force(u) - self._fext
        r[self.decomp.interface_dofs] += self.surrogate.evaluate(self.surrogate_input(u))
        return r

    def interface_stiffness(self, u):
        if hasattr(self.surrogate, "stiffness_matrix"):
            return self.surrogate.stiffness_matrix(self.surrogate_input(u))
        S = stiffness(self.surrogate, self.surrogate_input(u))
        if self.symmetrize and not isinstance(S, LowRankStiffness):
            S = 0.5 * (S + S.T)
        return S

    def tangent_parts(self, u):
        Kff = self._asm.linear_stiffness[self.free][:, self.free].tocsr()
        return Kff, self.interface_stiffness(u)

    def tangent_operator(self, u):
        Kff, S = self.tangent_parts(u)
        g = self._gpos

        def matvec(v):
            out = Kff @ v
            out[g] += S @ v[g]
            return out

        matvec.diagonal = lambda: _diag(Kff, S, g)
        return matvec

    def dense_tangent(self, u) -> np.ndarray:
        Kff, S = self.tangent_parts(u)
        T = Kff.toarray()
        Sd = S.dense() if isinstance(S, LowRankStiffness) else np.asarray(S)
        T[np.ix_(self._gpos, self._gpos)] += Sd
        return T


def _diag(Kff, S, g):
    d = np.asarray(Kff.diagonal()).copy()
    if isinstance(S, LowRankStiffness):
        d[g] += np.sum(S.factor ** 2, axis=1)
    else:
        d[g] += np.diag(S)
    return d


@dataclass
class TangentCheck:
    asymmetry: float          # ||T - T^T||_max / ||T||_max
    min_eig: float
    max_eig: float


def _spectrum(T):
    if np.allclose(T, T.T, rtol=0, atol=1e-12 * np.max(np.abs(T))):
        ev = np.linalg.eigvalsh(0.5 * (T + T.T))
    else:
        ev = np.linalg.eigvals(T).real
    return float(ev.min()), float(ev.max())


def assembled_tangent_spectrum(problem: CoupledProblem, state) -> tuple:
    """Extreme eigenvalues (real parts if nonsymmetric) of the free-dof tangent."""
    return _spectrum(problem.dense_tangent(np.asarray(state, dtype=np.float64)))


def solve_coupled(problem: CoupledProblem):
    """Newton-CG solve of the coupled problem.

    Returns ``(state, diagnostics)``.  Raises :class:`SpdViolationError`
    when CG meets non-positive curvature and :class:`SolverError` when
    Newton does not converge.
    """
    ddofs, dvals = problem.load.dirichlet_arrays()
    if problem.initial is not None:
        u0 = np.array(problem.initial, dtype=np.float64)
    else:
        u0 = problem._ref.copy()
    u0[ddofs] = dvals
    free = problem.free
    checks: List[TangentCheck] = []

    def tangent(u):
        op = problem.tangent_operator(u)
        if problem.record_tangents:
            T = problem.dense_tangent(u)
            asym = float(np.max(np.abs(T - T.T)) / np.max(np.abs(T)))
            checks.append(TangentCheck(asym, *_spectrum(T)))
        return op

    def diagonal(u):
        return problem.tangent_operator(u).diagonal()

    r0 = problem.residual(u0)
    scale = max(float(np.linalg.norm(problem._fext[free])),
                float(np.linalg.norm(problem.outer_force(u0)[free])),
                float(np.linalg.norm((r0 - problem.outer_force(u0) + problem._fext)[free])))
    label = f"coupled tangent with {problem.form} surrogate"
    try:
        u, rep = newton_cg(problem.residual, tangent, u0, free, problem.opts,
                           force_scale=scale, label=label, diagonal=diagonal)
    except SpdViolationError as exc:
        exc.tangent_checks = checks
        raise
    diag = rep.as_dict()
    diag["form"] = problem.form
    if problem.record_tangents:
        diag["tangent_checks"] = [[c.asymmetry, c.min_eig, c.max_eig] for c in checks]
    return u, diag


def qoi_reaction(problem: CoupledProblem, state, node_set, component: int) -> float:
    """Summed reaction on a Dirichlet-constrained outer node set."""
    mesh = problem.mesh
    nodes = mesh.node_sets[node_set] if isinstance(node_set, str) else np.asarray(node_set)
    dm = DofMap.for_mesh(mesh)
    dofs = np.array([dm.dof(int(a), component) for a in nodes])
    ddofs, _ = problem.load.dirichlet_arrays()
    if not np.all(np.isin(dofs, ddofs)):
        raise ValueError("node set is not fully constrained in this component")
    if np.intersect1d(nodes, problem.decomp.inner_nodes).size:
        raise ValueError("node set touches the inner domain")
    r = problem.outer_force(np.asarray(state, dtype=np.float64)) - problem._fext
    return float(np.sum(r[dofs]))


def monolithic_qoi(mesh: Mesh, reactions, node_set, component: int) -> float:
    nodes = mesh.node_sets[node_set] if isinstance(node_set, str) else np.asarray(node_set)
    dm = DofMap.for_mesh(mesh)
    return float(sum(reactions[dm.dof(int(a), component)] for a in nodes))


def diagnostics_json(diag: dict, qoi: Optional[dict] = None) -> str:
    out = dict(diag)
    if qoi is not None:
        out["qoi"] = qoi
    return json.dumps(out, sort_keys=True, indent=1)
