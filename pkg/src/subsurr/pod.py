"""Proper orthogonal decomposition of snapshot matrices."""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

SIGN_CONVENTION = "max-abs-positive"


@dataclass(frozen=True)
class PodBasis:
    columns: np.ndarray                  # (rows, K), orthonormal
    singular_values: np.ndarray          # full spectrum before truncation
    replaced: Tuple[int, ...] = ()       # columns filled in by completion

    def __post_init__(self):
        cols = np.ascontiguousarray(self.columns, dtype=np.float64)
        if cols.ndim != 2:
            raise ValueError("basis columns must be a matrix")
        sv = np.asarray(self.singular_values, dtype=np.float64)
        if np.any(np.diff(sv) > 0):
            raise ValueError("singular values must be nonincreasing")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "singular_values", sv)
        object.__setattr__(self, "replaced", tuple(int(i) for i in self.replaced))

    @property
    def K(self) -> int:
        return self.columns.shape[1]

    @property
    def rows(self) -> int:
        return self.columns.shape[0]

    def project(self, x):
        return self.columns.T @ x

    def lift(self, y):
        return self.columns @ y

    def truncate(self, K: int) -> "PodBasis":
        if not 1 <= K <= self.K:
            raise ValueError(f"K={K} out of range 1..{self.K}")
        return PodBasis(self.columns[:, :K], self.singular_values)


def _fix_signs(M):
    """Make the largest-magnitude entry of each column positive."""
    if M.size == 0:
        return M
    idx = np.argmax(np.abs(M), axis=0)
    s = np.sign(M[idx, np.arange(M.shape[1])])
    s[s == 0] = 1.0
    return M * s


def compute_pod(S: np.ndarray, K: int) -> PodBasis:
    """Leading ``K`` left singular vectors of ``S`` (thin SVD)."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise ValueError("snapshot matrix must be 2-D")
    if not np.all(np.isfinite(S)):
        raise ValueError("snapshot matrix has non-finite entries")
    kmax = min(S.shape)
    if not 1 <= K <= kmax:
        raise ValueError(f"K={K} out of range 1..{kmax}")
    U, sv, _ = np.linalg.svd(S, full_matrices=False)
    return PodBasis(_fix_signs(U[:, :K]), sv)


def residual_energy(basis: PodBasis, K: int) -> float:
    """Fraction of squared singular values discarded when keeping ``K``."""
    sv = basis.singular_values
    if not 0 <= K <= sv.size:
        raise ValueError(f"K={K} out of range 0..{sv.size}")
    e = sv ** 2
    total = float(e.sum())
    if total == 0.0:
        warnings.warn("all-zero snapshot matrix; residual energy defined as 0", RuntimeWarning)
        return 0.0
    return float(e[K:].sum() / total)


def rank_for_energy(basis: PodBasis, tol: float) -> int:
    """Smallest K whose residual energy is at most ``tol``."""
    for K in range(1, basis.singular_values.size + 1):
        if residual_energy(basis, K) <= tol:
            return K
    return basis.singular_values.size


def combine_orthogonalize(phi_f: PodBasis, phi_u: PodBasis, drop_tol: float = 1e-10) -> PodBasis:
    """Orthonormal basis for span([phi_f, phi_u]) with exactly K_f + K_u columns.

    Gram-Schmidt (two passes) in column order.  A column whose remainder
    falls below ``drop_tol`` times the largest input column norm is replaced
    by the first unit vector with a usable remainder; its index is recorded
    in ``replaced``.
    """
    A = np.hstack([phi_f.columns, phi_u.columns]) if phi_f.rows == phi_u.rows else None
    if A is None:
        raise ValueError("bases have different row dimensions")
    n, m = A.shape
    if m > n:
        raise ValueError(f"cannot fit {m} orthonormal columns in dimension {n}")
    scale = float(np.max(np.linalg.norm(A, axis=0))) or 1.0
    Q = np.zeros((n, m))
    replaced = []
    unit = 0
    for j in range(m):
        v = _orth(A[:, j], Q[:, :j])
        nv = np.linalg.norm(v)
        if nv <= drop_tol * scale:
            replaced.append(j)
            while True:
                e = np.zeros(n)
                e[unit] = 1.0
                unit += 1
                v = _orth(e, Q[:, :j])
                nv = np.linalg.norm(v)
                if nv > 1e-3:
                    break
        Q[:, j] = v / nv
    if replaced:
        log.info("combined basis: columns %s were rank deficient and completed", replaced)
    return PodBasis(Q, np.zeros(0), replaced)


def _orth(v, Q):
    v = v.copy()
    for _ in range(2):
        v -= Q @ (Q.T @ v)
    return v


def save_basis(stem, basis: PodBasis, dof_order: Sequence[Tuple[int, int]]) -> Path:
    stem = Path(stem)
    payload = np.asfortranarray(basis.columns, dtype="<f8").tobytes(order="F")
    stem.with_suffix(".bin").write_bytes(payload)
    head = {
        "rows": basis.rows,
        "K": basis.K,
        "singular_values": [float(x) for x in basis.singular_values],
        "dof_order": [list(map(int, p)) for p in dof_order],
        "sign_convention": SIGN_CONVENTION,
        "replaced_columns": list(basis.replaced),
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    stem.with_suffix(".json").write_text(json.dumps(head, sort_keys=True, indent=1) + "\n")
    return stem.with_suffix(".json")


def load_basis(stem):
    stem = Path(stem)
    head = json.loads(stem.with_suffix(".json").read_text())
    payload = stem.with_suffix(".bin").read_bytes()
    if hashlib.sha256(payload).hexdigest() != head["checksum"]:
        raise ValueError(f"{stem}: basis checksum mismatch")
    cols = np.frombuffer(payload, dtype="<f8").reshape((head["rows"], head["K"]), order="F").copy()
    basis = PodBasis(cols, np.asarray(head["singular_values"]), head.get("replaced_columns", ()))
    return basis, [tuple(p) for p in head["dof_order"]]
