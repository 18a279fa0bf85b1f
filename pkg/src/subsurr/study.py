"""End-to-end pipeline: snapshots, bases, fits, coupled trajectories, errors."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .coupled import (CoupledProblem, TangentCheck, monolithic_qoi, qoi_reaction,
                      solve_coupled)
from .decomposition import SnapshotSet
from .exemplars import Exemplar
from .fem import Assembler, solve_monolithic
from .pod import PodBasis, combine_orthogonalize, compute_pod
from .solvers import NewtonOptions, SolverError, SpdViolationError
from .training import (SpsdLlsOptions, TrainConfig, TrajectorySpec, fit_lls,
                       fit_nn_with_history, fit_spsd_lls, fit_spsd_nn_with_history,
                       generate_snapshots, training_error)

log = logging.getLogger(__name__)


def snapshots_for(ex: Exemplar, workers: int = 1) -> SnapshotSet:
    return generate_snapshots(ex.mesh, ex.decomp, ex.materials, ex.springs, ex.train_specs,
                              ex.load, include_t0=ex.include_t0,
                              reference_state=ex.reference_state, f0=ex.f0, workers=workers)


@dataclass
class Bases:
    phi_u: PodBasis
    phi_f: PodBasis

    @property
    def phi_star(self) -> PodBasis:
        return combine_orthogonalize(self.phi_f, self.phi_u)


def full_bases(snap: SnapshotSet) -> Bases:
    """Bases at the largest admissible rank; truncate with :meth:`at`."""
    k = min(snap.U.shape)
    return Bases(compute_pod(snap.U, k), compute_pod(snap.F_star, k))


def bases_at(full: Bases, K: int) -> Bases:
    return Bases(full.phi_u.truncate(K), full.phi_f.truncate(K))


def fit_form(form: str, snap: SnapshotSet, bases: Bases, cfg: Optional[TrainConfig] = None,
             spsd_opts: Optional[SpsdLlsOptions] = None):
    """Fit one model form; returns ``(model, info)``."""
    cfg = cfg or TrainConfig()
    info: Dict = {}
    if form == "lls":
        model = fit_lls(snap, bases.phi_f, bases.phi_u)
    elif form == "spsd-lls":
        model, obj = fit_spsd_lls(snap, bases.phi_star, spsd_opts)
        info["objective"] = obj
    elif form == "nn":
        model, hist = fit_nn_with_history(snap, bases.phi_f, bases.phi_u, cfg)
        info["history"] = hist
    elif form == "spsd-nn":
        model, hist = fit_spsd_nn_with_history(snap, bases.phi_star, cfg)
        info["history"] = hist
    else:
        raise ValueError(f"unknown model form {form!r}")
    info["training_error"] = training_error(model, snap)
    return model, info


def reference_trajectory(ex: Exemplar, spec: TrajectorySpec) -> np.ndarray:
    """Monolithic QoIs, one row per step and one column per QoI."""
    asm = Assembler(ex.mesh, ex.materials, ex.springs)
    u = ex.reference_state
    rows = []
    for t in spec.times(ex.include_t0):
        res = solve_monolithic(ex.mesh, None, ex.materials, ex.springs, ex.load(spec, float(t)),
                               initial=u, assembler=asm)
        u = res.state
        rows.append([monolithic_qoi(ex.mesh, res.reactions, s, c) for s, c in ex.qoi])
    return np.asarray(rows)


@dataclass
class CoupledRun:
    qoi: np.ndarray
    status: str = "ok"                 # ok | spd | solver
    message: str = ""
    newton_iters: int = 0
    cg_iters: int = 0
    tangent_checks: List = field(default_factory=list)


def coupled_trajectory(ex: Exemplar, model, spec: TrajectorySpec,
                       opts: Optional[NewtonOptions] = None, symmetrize: bool = False,
                       record_tangents: bool = False) -> CoupledRun:
    opts = opts or NewtonOptions()
    u = None
    rows, checks = [], []
    it = cg = 0
    for t in spec.times(ex.include_t0):
        prob = CoupledProblem(ex.mesh, ex.decomp, ex.materials, model, ex.load(spec, float(t)),
                              opts=opts, reference_state=ex.reference_state, initial=u,
                              symmetrize=symmetrize, record_tangents=record_tangents)
        try:
            u, diag = solve_coupled(prob)
        except SpdViolationError as exc:
            return CoupledRun(np.asarray(rows), "spd", f"t={t:g}: {exc}", it, cg, checks)
        except SolverError as exc:
            return CoupledRun(np.asarray(rows), "solver", f"t={t:g}: {exc}", it, cg, checks)
        it += diag["newton_iters"]
        cg += diag["cg_iters"]
        checks.extend(TangentCheck(*c) for c in diag.get("tangent_checks", []))
        rows.append([qoi_reaction(prob, u, s, c) for s, c in ex.qoi])
    return CoupledRun(np.asarray(rows), "ok", "", it, cg, checks)


def case_error(q_ml: np.ndarray, q_ref: np.ndarray, column: int = 0) -> float:
    """Relative 2-norm error of one QoI over a trajectory."""
    den = np.linalg.norm(q_ref[:, column])
    return float(np.linalg.norm(q_ml[:, column] - q_ref[:, column]) / den)


@dataclass
class StudyRow:
    form: str
    K: int
    case: int
    error: float
    status: str
    training_error: float
    newton_iters: int = 0
    cg_iters: int = 0

    @property
    def label(self) -> str:
        if self.status == "ok":
            return repr(self.error)
        return "FAILED(SPD)" if self.status == "spd" else "FAILED(SOLVER)"


def run_study(ex: Exemplar, forms: Sequence[str], Ks: Sequence[int],
              cfg: Optional[TrainConfig] = None, snap: Optional[SnapshotSet] = None,
              cases: Optional[Sequence[int]] = None, column: int = 0,
              references: Optional[Dict[int, np.ndarray]] = None,
              spsd_opts: Optional[SpsdLlsOptions] = None, models: Optional[dict] = None,
              runs_out: Optional[dict] = None, zero_tol: float = 1e-9, workers: int = 1):
    """Relative QoI error for every (form, K, test case).

    ``K`` is the per-field basis size; SPSD forms use the combined basis of
    size ``2K``.  Models already present in ``models`` (keyed by
    ``(form, K)``) are reused, newly fitted ones are added to it.  Cases
    whose reference QoI norm is below ``zero_tol`` times the largest one
    have no meaningful relative error and are skipped.  Test cases of one
    model are solved on ``workers`` threads; results are merged in case order.
    """
    snap = snap if snap is not None else snapshots_for(ex)
    full = full_bases(snap)
    cases = list(range(len(ex.test_specs))) if cases is None else list(cases)
    refs = references if references is not None else {}
    for c in cases:
        if c not in refs:
            refs[c] = reference_trajectory(ex, ex.test_specs[c])
    models = models if models is not None else {}
    scale = max(np.linalg.norm(refs[c][:, column]) for c in cases)
    live = [c for c in cases if np.linalg.norm(refs[c][:, column]) > zero_tol * scale]
    rows: List[StudyRow] = []
    for form in forms:
        for K in Ks:
            if (form, K) in models:
                model = models[(form, K)]
                terr = training_error(model, snap)
            else:
                model, info = fit_form(form, snap, bases_at(full, K), cfg, spsd_opts)
                models[(form, K)] = model
                terr = info["training_error"]
            if workers > 1:
                with ThreadPoolExecutor(workers) as pool:
                    done = list(pool.map(lambda c: coupled_trajectory(ex, model, ex.test_specs[c]),
                                         live))
            else:
                done = [coupled_trajectory(ex, model, ex.test_specs[c]) for c in live]
            for c, run in zip(live, done):
                err = case_error(run.qoi, refs[c], column) if run.status == "ok" else float("nan")
                rows.append(StudyRow(form, K, c, err, run.status, terr,
                                     run.newton_iters, run.cg_iters))
                if runs_out is not None:
                    runs_out[(form, K, c)] = run
                log.info("%s K=%d case %d: %s", form, K, c, rows[-1].label)
    return rows, refs


def write_table(path, rows: Sequence[StudyRow]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["form", "K", "case", "relative_error", "training_error",
                    "newton_iters", "cg_iters"])
        for r in rows:
            w.writerow([r.form, r.K, r.case, r.label, repr(r.training_error), r.newton_iters,
                        r.cg_iters])
