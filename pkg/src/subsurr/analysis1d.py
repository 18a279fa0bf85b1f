"""Definiteness of the coarse system for a 1D bar closed by each model form.

The bar has ``N`` interior dofs on ``N + 1`` uniform linear elements with
both ends fixed.  Coarse dofs are ``{1, 2, N-1, N}``, the interface is
``{2, N-1}`` and the fine dofs ``{3, ..., N-2}`` are removed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict, List

import numpy as np
import scipy.sparse as sp

from .surrogates import hidden_dims, init_theta, tril_size, unpack_tril
from . import kernels

COARSE_PATTERN = np.array([[2.0, -1.0, 0.0, 0.0],
                           [-1.0, 1.0, 0.0, 0.0],
                           [0.0, 0.0, 1.0, -1.0],
                           [0.0, 0.0, -1.0, 2.0]])
COUPLING_PATTERN = np.array([[0.0, 0.0, 0.0, 0.0],
                             [1.0, -1.0, 0.0, 0.0],
                             [0.0, 0.0, -1.0, 1.0],
                             [0.0, 0.0, 0.0, 0.0]])


@dataclass(frozen=True)
class Bar1dCase:
    N: int = 10
    A: float = 1.0
    E: float = 1.0
    L: float = 11.0
    b: float = 1.0

    def __post_init__(self):
        if self.N < 5:
            raise ValueError("need N >= 5 so coarse and fine dofs are disjoint")
        if not (self.A > 0 and self.E > 0 and self.L > 0):
            raise ValueError("A, E and L must be positive")

    @property
    def dx(self) -> float:
        return self.L / (self.N + 1)

    @property
    def k(self) -> float:
        """Element stiffness ``AE / dx``."""
        return self.A * self.E / self.dx

    @property
    def coarse_index(self) -> np.ndarray:
        """Zero-based positions of coarse dofs among the interior dofs."""
        N = self.N
        return np.array([0, 1, N - 2, N - 1])

    @property
    def fine_index(self) -> np.ndarray:
        return np.arange(2, self.N - 2)


def build_1d_system(case: Bar1dCase):
    """Interior stiffness ``(AE/dx) tridiag(-1, 2, -1)`` and load ``dx b``."""
    N = case.N
    K = case.k * sp.diags([-np.ones(N - 1), 2 * np.ones(N), -np.ones(N - 1)], [-1, 0, 1])
    return K.toarray(), case.dx * case.b * np.ones(N)


def build_coarse_1d(case: Bar1dCase):
    """Coarse stiffness, coarse load and the interior coupling operator.

    The coupling is returned as a function of ``(u2, u'_first, u'_last, u_{N-1})``.
    """
    Kbar = case.k * COARSE_PATTERN
    bbar = case.dx * case.b * np.ones(4)
    S = case.k * COUPLING_PATTERN

    def sbar(u_iface_left, u_fine_first, u_fine_last, u_iface_right):
        return S @ np.array([u_iface_left, u_fine_first, u_fine_last, u_iface_right])

    return Kbar, bbar, sbar


def coarse_with_closure(case: Bar1dCase, K_ml: np.ndarray) -> np.ndarray:
    """``Kbar`` plus a 2x2 interface stiffness placed on coarse rows 1 and 2."""
    Kbar, _, _ = build_coarse_1d(case)
    T = Kbar.copy()
    T[1:3, 1:3] += K_ml
    return T


def _random_spsd_nn_factor(rng, k):
    dims = hidden_dims(k, tril_size(k))
    theta = init_theta(dims, rng)
    x = rng.standard_normal((1, k))
    return unpack_tril(kernels.mlp_forward(theta, dims, x), k)[0]


def verify_model_classes(case: Bar1dCase, n_draws: int = 100, seed: int = 0) -> Dict:
    """Check the singular/SPD/nonsymmetric claims for each closure class.

    Closures are expressed in units of ``AE/dx`` so the canonical
    ``-0.5 I`` case is singular for every bar.
    """
    rng = np.random.default_rng(seed)
    k = case.k
    K, _ = build_1d_system(case)
    Kbar, _, _ = build_coarse_1d(case)
    out: Dict = {"case": asdict(case), "element_stiffness": k}
    out["monolithic_min_eig"] = float(np.linalg.eigvalsh(K).min())
    out["coarse_min_eig"] = float(np.linalg.eigvalsh(Kbar).min())

    T = coarse_with_closure(case, -0.5 * k * np.eye(2)) / k
    out["lls_canonical_det"] = float(np.linalg.det(T))
    out["lls_canonical_min_eig"] = float(np.linalg.eigvalsh(T).min())

    mins: List[float] = []
    for i in range(n_draws):
        kstar = 2
        Q = np.linalg.qr(rng.standard_normal((2, kstar)))[0]
        if i % 2 == 0:
            L = np.tril(rng.standard_normal((kstar, kstar)))
        else:
            L = _random_spsd_nn_factor(rng, kstar)
        T = coarse_with_closure(case, k * (Q @ L @ L.T @ Q.T))
        mins.append(float(np.linalg.eigvalsh(T).min()))
    out["spsd_min_eigs_min"] = float(min(mins))
    out["spsd_draws"] = n_draws

    A = rng.standard_normal((2, 2))
    T = coarse_with_closure(case, k * A)
    out["lls_random_asymmetry"] = float(np.max(np.abs(T - T.T)))

    out["checks"] = {
        "monolithic_spd": out["monolithic_min_eig"] > 0,
        "coarse_spd": out["coarse_min_eig"] > 0,
        "lls_canonical_singular": abs(out["lls_canonical_det"]) <= 1e-12,
        "spsd_closures_spd": out["spsd_min_eigs_min"] > 0,
        "lls_random_nonsymmetric": out["lls_random_asymmetry"] > 0,
    }
    return out


_CLAIMS = {
    "monolithic_spd": ("full interior stiffness is SPD", "monolithic_min_eig", "min eig"),
    "coarse_spd": ("coarse stiffness without closure is SPD", "coarse_min_eig", "min eig"),
    "lls_canonical_singular": ("LLS closure -0.5 I makes the coarse matrix singular",
                               "lls_canonical_det", "det"),
    "spsd_closures_spd": ("random SPSD-LLS / SPSD-NN closures keep the system SPD",
                          "spsd_min_eigs_min", "smallest min eig"),
    "lls_random_nonsymmetric": ("a random LLS closure is not symmetric",
                                "lls_random_asymmetry", "max |T - T^T|"),
}


def report_text(rep: Dict) -> str:
    lines = [f"1D bar, N={rep['case']['N']}, AE/dx={rep['element_stiffness']:g}"]
    for key, (claim, val, what) in _CLAIMS.items():
        ok = "PASS" if rep["checks"][key] else "FAIL"
        lines.append(f"  {ok}  {claim}: {what} = {rep[val]:.6g}")
    return "\n".join(lines) + "\n"


def report_json(rep: Dict) -> str:
    return json.dumps(rep, sort_keys=True, indent=1)
