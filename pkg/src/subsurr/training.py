"""Snapshot generation and fitting of the four surrogate forms."""
from __future__ import annotations

import csv
import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .decomposition import Decomposition, InnerDomain, SnapshotSet
from .fem import Assembler, LoadCase, solve_monolithic
from .pod import PodBasis
from .solvers import NewtonOptions, SolverError
from .surrogates import (LlsModel, NnModel, SpsdLlsModel, SpsdNnModel, hidden_dims,
                         init_theta, tril_size, unpack_tril)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class SnapshotError(RuntimeError):
    def __init__(self, message, spec_index, step):
        super().__init__(message)
        self.spec_index = spec_index
        self.step = step


# ------------------------------------------------------------------ loading

def cosine_ramp(b: float, t0: float, t1: float, t: float) -> float:
    """Smooth ramp from 0 at ``t0`` to ``b`` at ``t1`` with zero end slopes."""
    if not t0 < t1:
        raise ValueError("ramp needs t0 < t1")
    if t < t0 - 1e-12 or t > t1 + 1e-12:
        raise ValueError(f"t={t} outside ramp interval [{t0}, {t1}]")
    s = min(max((t - t0) / (t1 - t0), 0.0), 1.0)
    return 0.5 * b * (1.0 - np.cos(np.pi * s))


@dataclass(frozen=True)
class TrajectorySpec:
    """One quasi-static loading trajectory.

    ``parameters`` holds named amplitudes.  For multi-segment cosine
    channels, amplitudes ``<name>1, <name>2, ...`` apply on consecutive
    intervals of ``breakpoints``.
    """
    parameters: Dict[str, float]
    n_steps: int = 100
    breakpoints: Tuple[float, ...] = (0.0, 0.5, 1.0)
    T: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be at least 1")
        bp = tuple(float(b) for b in self.breakpoints)
        if any(b < 0 or b > self.T for b in bp) or list(bp) != sorted(bp):
            raise ValueError("breakpoints must be sorted and inside [0, T]")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "parameters", {k: float(v) for k, v in self.parameters.items()})

    def times(self, include_t0: bool = False) -> np.ndarray:
        k0 = 0 if include_t0 else 1
        return self.T * np.arange(k0, self.n_steps + 1) / self.n_steps

    def channel(self, name: str, t: float) -> float:
        """Piecewise cosine ramp through the amplitudes ``name1, name2, ...``."""
        val = 0.0
        bp = self.breakpoints
        for i in range(len(bp) - 1):
            b = self.parameters.get(f"{name}{i + 1}", 0.0)
            if t >= bp[i + 1]:
                val += b
            else:
                if t > bp[i]:
                    val += cosine_ramp(b, bp[i], bp[i + 1], t)
                break
        return val


LoadFn = Callable[[TrajectorySpec, float], LoadCase]


def generate_snapshots(mesh, decomp: Decomposition, material, gap_springs,
                       specs: Sequence[TrajectorySpec], load_fn: LoadFn,
                       include_t0: bool = False, reference_state=None, f0=None,
                       opts: Optional[NewtonOptions] = None, workers: int = 1) -> SnapshotSet:
    """Solve every (trajectory, step) with the full model and record traces.

    Columns of ``U`` are interface displacements (relative to
    ``reference_state`` when given) and columns of ``F`` the inner-domain
    interface force.  Steps of one trajectory are solved in order, each warm
    started from the previous one.
    """
    if not specs:
        raise ValueError("no trajectories given")
    asm = Assembler(mesh, material, gap_springs)
    inner = InnerDomain(decomp, mesh, material, gap_springs)
    G = decomp.interface_dofs
    ref = np.zeros(asm.n_dofs) if reference_state is None else np.asarray(reference_state)

    def run(i):
        spec = specs[i]
        cols_u, cols_f, prov = [], [], []
        u = ref.copy()
        for k, t in enumerate(spec.times(include_t0)):
            try:
                res = solve_monolithic(mesh, None, material, gap_springs, load_fn(spec, float(t)),
                                       opts=opts, initial=u, assembler=asm)
            except SolverError as exc:
                raise SnapshotError(f"trajectory {i} step {k} (t={t:g}): {exc}", i, k) from exc
            u = res.state
            cols_u.append(u[G] - ref[G])
            cols_f.append(inner.interface_force(u))
            prov.append((i, float(t)))
        return cols_u, cols_f, prov

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, range(len(specs))))
    else:
        parts = [run(i) for i in range(len(specs))]
    U = np.column_stack([c for p in parts for c in p[0]])
    F = np.column_stack([c for p in parts for c in p[1]])
    prov = [x for p in parts for x in p[2]]
    f0 = np.zeros(G.size) if f0 is None else np.asarray(f0, dtype=np.float64)
    return SnapshotSet(U, F, f0, decomp.dof_order, prov)


# --------------------------------------------------------------- linear fits

def _reduced(snapshots: SnapshotSet, phi_in: PodBasis, phi_out: PodBasis):
    return phi_in.columns.T @ snapshots.U, phi_out.columns.T @ snapshots.F_star


def relative_error(pred, target) -> float:
    """Relative Frobenius error; absolute when ``target`` is zero."""
    den = np.linalg.norm(target)
    num = np.linalg.norm(np.asarray(pred) - np.asarray(target))
    return float(num / den) if den > 0 else float(num)


def fit_lls(snapshots: SnapshotSet, phi_f: PodBasis, phi_u: PodBasis) -> LlsModel:
    """Least-squares reduced operator ``A_hat`` using every snapshot."""
    N = snapshots.n_snapshots
    if phi_f.K > N or phi_u.K > N:
        raise ValueError(f"basis dimensions exceed the snapshot count {N}")
    X, Y = _reduced(snapshots, phi_u, phi_f)
    At, _, rank, sv = np.linalg.lstsq(X.T, Y.T, rcond=None)
    if rank < X.shape[0]:
        warnings.warn(f"reduced displacement features have rank {rank} < K_u={X.shape[0]}; "
                      "returning the minimum-norm solution", RuntimeWarning)
    return LlsModel(phi_f, phi_u, At.T, snapshots.f0, snapshots.dof_order)


def lls_objective(A_hat, X, Y) -> float:
    return float(np.sum((Y - A_hat @ X) ** 2))


@dataclass
class SpsdLlsOptions:
    restarts: int = 5
    iterations: int = 20000
    lr: float = 1e-2
    polish: bool = True
    seed: int = 0


def spsd_objective_grad(Lv, G, C, yy, k):
    """Objective ``||Y - L L^T X||_F^2`` and gradient in packed ``L``.

    ``G = X X^T``, ``C = Y X^T`` and ``yy = ||Y||_F^2``.
    """
    ti, tj = np.tril_indices(k)
    L = np.zeros((k, k))
    L[ti, tj] = Lv
    M = L @ L.T
    MG = M @ G
    J = float(np.sum(MG * M) - 2.0 * np.sum(M * C) + yy)
    gM = 2.0 * (MG - C)
    gL = (gM + gM.T) @ L
    return J, gL[ti, tj]


def fit_spsd_lls(snapshots: SnapshotSet, phi_star: PodBasis,
                 opts: Optional[SpsdLlsOptions] = None) -> Tuple[SpsdLlsModel, float]:
    """Approximate minimizer of the SPSD-constrained least-squares problem.

    Multi-start Adam on the packed factor, the first start taken from the
    PSD part of the unconstrained solution, followed by an L-BFGS polish.
    Returns the model and its relative objective ``sqrt(J) / ||Y||``.
    """
    opts = opts or SpsdLlsOptions()
    X, Y = _reduced(snapshots, phi_star, phi_star)
    k = phi_star.K
    sx = float(np.max(np.abs(X))) or 1.0
    sy = float(np.max(np.abs(Y))) or 1.0
    Xs, Ys = X / sx, Y / sy
    G, C, yy = Xs @ Xs.T, Ys @ Xs.T, float(np.sum(Ys * Ys))
    ti, tj = np.tril_indices(k)
    if yy == 0.0:
        return SpsdLlsModel(phi_star, np.zeros((k, k)), snapshots.f0, snapshots.dof_order), 0.0

    starts = []
    At = np.linalg.lstsq(Xs.T, Ys.T, rcond=None)[0]
    S = 0.5 * (At + At.T)
    w, V = np.linalg.eigh(S)
    wp = np.maximum(w, 0.0)
    Mp = (V * wp) @ V.T
    # lower-triangular L with L L^T = Mp, also for singular Mp: B^T = Q R gives B B^T = R^T R
    R = np.linalg.qr((V * np.sqrt(wp)).T, mode="r")
    starts.append(R.T[ti, tj])
    rng = np.random.default_rng(opts.seed)
    scale = np.sqrt(max(np.trace(Mp), 1e-8) / k)
    for _ in range(opts.restarts - 1):
        starts.append(scale * rng.standard_normal(ti.size) / np.sqrt(k))

    best, best_J = None, np.inf
    for r, x in enumerate(starts):
        x = x.copy()
        m, v = np.zeros_like(x), np.zeros_like(x)
        for it in range(1, opts.iterations + 1):
            J, g = spsd_objective_grad(x, G, C, yy, k)
            if not np.isfinite(J):
                break
            kernels.adam_step(x, g, m, v, opts.lr, 0.9, 0.999, 1e-8, it)
        if opts.polish:
            res = minimize(spsd_objective_grad, x, args=(G, C, yy, k), jac=True,
                           method="L-BFGS-B", options={"maxiter": 20000, "ftol": 1e-15,
                                                       "gtol": 1e-14})
            x = res.x
        J = spsd_objective_grad(x, G, C, yy, k)[0]
        log.info("spsd-lls restart %d: relative objective %.3e", r, np.sqrt(max(J, 0) / yy))
        if J < best_J:
            best, best_J = x, J
        else:
            log.debug("spsd-lls restart %d did not improve", r)
    L = np.zeros((k, k))
    L[ti, tj] = best * np.sqrt(sy / sx)
    model = SpsdLlsModel(phi_star, L, snapshots.f0, snapshots.dof_order)
    return model, float(np.sqrt(max(best_J, 0.0) / yy))


# ----------------------------------------------------------------- networks

DEFAULT_LRS = (1e-3, 2e-4, 1e-4, 5e-5, 2e-5)
DEFAULT_MILESTONES = (500, 1000, 2000, 5000, 15000)


@dataclass
class TrainConfig:
    epochs: int = 35000
    batch_size: int = 500
    lr_schedule: Tuple[float, ...] = DEFAULT_LRS
    lr_milestones: Tuple[int, ...] = DEFAULT_MILESTONES
    early_stop_window: int = 200
    split: Tuple[float, float] = (0.8, 0.2)
    rng_seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        self.lr_schedule = tuple(float(x) for x in self.lr_schedule)
        self.lr_milestones = tuple(int(x) for x in self.lr_milestones)
        self.split = tuple(float(x) for x in self.split)
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_window < 1:
            raise ValueError("epochs, batch_size and early_stop_window must be positive")
        if not self.lr_schedule or any(x <= 0 for x in self.lr_schedule):
            raise ValueError("learning rates must be positive")
        if len(self.lr_milestones) != len(self.lr_schedule):
            raise ValueError("need one milestone per learning rate")
        if len(self.split) != 2 or min(self.split) <= 0 or abs(sum(self.split) - 1.0) > 1e-12:
            raise ValueError("split must be two positive fractions summing to 1")

    def lr(self, epoch: int) -> float:
        """Learning rate ``lr_schedule[i]`` while ``epoch < lr_milestones[i]``."""
        for rate, stop in zip(self.lr_schedule, self.lr_milestones):
            if epoch < stop:
                return rate
        return self.lr_schedule[-1]

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        """``default`` or ``preload`` (batch 60, first rate 2.5e-4)."""
        if name == "default":
            return cls(**overrides)
        if name == "preload":
            base = dict(batch_size=60, lr_schedule=(2.5e-4,) + DEFAULT_LRS[1:])
            base.update(overrides)
            return cls(**base)
        raise ValueError(f"unknown preset {name!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown training options: {sorted(bad)}")
        return cls(**d)


@dataclass
class TrainHistory:
    rows: List[Tuple[int, float, float, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_running_mean: float = np.inf
    running_means: List[float] = field(default_factory=list)
    stopped_early: bool = False

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "lr"])
            for e, tl, vl, lr in self.rows:
                w.writerow([e, repr(tl), repr(vl), repr(lr)])


def _predict(theta, dims, X, head):
    out = kernels.mlp_forward(theta, dims, X)
    if head == 0:
        return out
    k = dims[0]
    L = unpack_tril(out, k)
    v = np.einsum("nji,nj->ni", L, X)
    return np.einsum("nij,nj->ni", L, v)


def _loss(theta, dims, X, T, head):
    R = _predict(theta, dims, X, head) - T
    return float(np.sum(R * R) / max(X.shape[0], 1))


def train_network(X: np.ndarray, T: np.ndarray, dims, head: int, cfg: TrainConfig):
    """Adam on the mean squared-norm loss with running-mean early stopping.

    ``X`` and ``T`` hold one sample per row.  Returns the parameters at the
    epoch with the lowest running-mean validation loss and the history.
    """
    n = X.shape[0]
    if n < 5:
        raise ValueError(f"need at least 5 samples for a train/validation split, got {n}")
    rng = np.random.default_rng(cfg.rng_seed)
    perm = rng.permutation(n)
    n_val = max(1, int(round(cfg.split[1] * n)))
    val, trn = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    Xt, Tt = np.ascontiguousarray(X[trn]), np.ascontiguousarray(T[trn])
    Xv, Tv = np.ascontiguousarray(X[val]), np.ascontiguousarray(T[val])
    theta = init_theta(dims, rng)
    m, v = np.zeros_like(theta), np.zeros_like(theta)
    hist = TrainHistory()
    best_theta = theta.copy()
    vals: List[float] = []
    step = 0
    W = cfg.early_stop_window
    for epoch in range(cfg.epochs):
        lr = cfg.lr(epoch)
        order = np.random.default_rng((cfg.rng_seed, epoch)).permutation(trn.size)
        tot = 0.0
        for s in range(0, trn.size, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, g = kernels.mlp_loss_grad(theta, dims, Xt[idx], Tt[idx], head)
            if not (np.isfinite(loss) and np.all(np.isfinite(g))):
                raise TrainingError(f"loss diverged at epoch {epoch} (lr {lr:g}, last finite "
                                    f"validation loss {vals[-1] if vals else float('nan'):.3e})")
            step += 1
            kernels.adam_step(theta, g, m, v, lr, cfg.beta1, cfg.beta2, cfg.eps, step)
            tot += loss * idx.size
        vl = _loss(theta, dims, Xv, Tv, head)
        if not np.isfinite(vl):
            raise TrainingError(f"validation loss non-finite at epoch {epoch}")
        vals.append(vl)
        rm = float(np.mean(vals[-W:]))
        hist.running_means.append(rm)
        hist.rows.append((epoch, tot / trn.size, vl, lr))
        if rm < hist.best_running_mean:
            hist.best_running_mean, hist.best_epoch = rm, epoch
            best_theta = theta.copy()
        elif epoch - hist.best_epoch >= W:
            hist.stopped_early = True
            break
    return best_theta, hist


def _scale(A) -> float:
    s = float(np.max(np.abs(A))) if A.size else 0.0
    return s if s > 0 else 1.0


def fit_nn_with_history(snapshots: SnapshotSet, phi_f: PodBasis, phi_u: PodBasis,
                        cfg: TrainConfig):
    X, Y = _reduced(snapshots, phi_u, phi_f)
    su, sf = _scale(X), _scale(Y)
    dims = hidden_dims(phi_u.K, phi_f.K)
    theta, hist = train_network(X.T / su, Y.T / sf, dims, 0, cfg)
    return NnModel(phi_f, phi_u, theta, dims, snapshots.f0, su, sf, snapshots.dof_order), hist


def fit_spsd_nn_with_history(snapshots: SnapshotSet, phi_star: PodBasis, cfg: TrainConfig):
    X, Y = _reduced(snapshots, phi_star, phi_star)
    su, sf = _scale(X), _scale(Y)
    k = phi_star.K
    dims = hidden_dims(k, tril_size(k))
    theta, hist = train_network(X.T / su, Y.T / sf, dims, 1, cfg)
    return SpsdNnModel(phi_star, theta, dims, snapshots.f0, su, sf, snapshots.dof_order), hist


def fit_nn(snapshots, phi_f, phi_u, cfg: TrainConfig) -> NnModel:
    return fit_nn_with_history(snapshots, phi_f, phi_u, cfg)[0]


def fit_spsd_nn(snapshots, phi_star, cfg: TrainConfig) -> SpsdNnModel:
    return fit_spsd_nn_with_history(snapshots, phi_star, cfg)[0]


def training_error(model, snapshots: SnapshotSet) -> float:
    """Relative Frobenius error of the model over the snapshot columns."""
    pred = model.evaluate(snapshots.U.T).T
    return relative_error(pred - snapshots.f0[:, None], snapshots.F_star)
