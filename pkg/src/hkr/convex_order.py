"""Convex-order dominance, martingale couplings, and gluing.

rho dominates mu in convex order iff a martingale coupling of (mu, rho)
exists (Strassen); for finitely supported measures that is an LP
feasibility problem. A negative answer is certified by a Farkas vector,
rendered here as a piecewise-linear convex witness phi with
integral(phi, rho) < integral(phi, mu). Two martingale couplings into a
common dominant glue into a three-marginal plan by conditional
independence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lp import DenseLp, solve_lp
from .measures import CenteredPair, DiscreteMeasure, GuardExceeded, diameter, variance
from .transport3 import Plan3


class DisintegrationFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class MartingalePlan:
    """Coupling gamma of (mu, rho) whose rows disintegrate to kernels with
    barycentre at the source atom: sum_k gamma[i,k] z_k = mu_i x_i."""

    gamma: np.ndarray  # (len(mu), len(rho))
    mu: DiscreteMeasure
    rho: DiscreteMeasure

    def kernel(self, i: int) -> np.ndarray:
        """Probability weights over rho atoms conditioned on mu atom i."""
        row = self.gamma[i]
        return row / row.sum()

    def max_residual(self) -> float:
        """Worst violation among row sums, column sums, and barycentres."""
        rm = np.abs(self.gamma.sum(1) - self.mu.weights).max()
        rk = np.abs(self.gamma.sum(0) - self.rho.weights).max()
        bary = self.gamma @ self.rho.points - self.mu.weights[:, None] * self.mu.points
        return float(max(rm, rk, np.abs(bary).max()))


@dataclass(frozen=True)
class ConvexWitness:
    """phi(z) = max_i (intercepts[i] + <slopes[i], z - anchors[i]>), convex
    piecewise linear, with integral(phi, rho) < integral(phi, mu)."""

    anchors: np.ndarray
    intercepts: np.ndarray
    slopes: np.ndarray

    def __call__(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        vals = self.intercepts[None, :] + \
            np.einsum("kid->ki", (z[:, None, :] - self.anchors[None, :, :]) * self.slopes[None, :, :])
        return vals.max(axis=1)

    def integral(self, m: DiscreteMeasure) -> float:
        return float(self.weights_dot(m))

    def weights_dot(self, m: DiscreteMeasure) -> float:
        return float(m.weights @ self(m.points))


@dataclass(frozen=True)
class OrderResult:
    yes: bool
    plan: MartingalePlan | None = None
    witness: ConvexWitness | None = None

    def __bool__(self):
        return self.yes


def dominates(rho: DiscreteMeasure, mu: DiscreteMeasure, tol: float = 1e-8) -> OrderResult:
    """Decide rho >=_c mu by martingale-coupling feasibility."""
    if rho.dim != mu.dim:
        raise ValueError("dimension mismatch")
    mass = mu.total_mass()
    if abs(rho.total_mass() - mass) > tol * (1 + mass):
        w = ConvexWitness(anchors=np.zeros((1, mu.dim)),
                          intercepts=np.array([np.sign(mass - rho.total_mass())]),
                          slopes=np.zeros((1, mu.dim)))
        return OrderResult(False, witness=w)
    m, k, d = len(mu), len(rho), mu.dim
    scale = 1.0 + diameter(mu, rho)
    # rows: m mass rows, k mass rows, m*d barycentre rows (normalized)
    rows = m + k + m * d
    cols = np.arange(m * k)
    ii, kk = np.divmod(cols, k)
    zx = (rho.points[kk] - mu.points[ii]) / scale
    b = np.concatenate([mu.weights / mass, rho.weights / mass, np.zeros(m * d)])
    if m * k > 20_000:
        # too large for the dense tableau; decide feasibility with the
        # sparse interior-point/simplex backend. No Farkas witness is
        # recovered on this path, only the verdict and the coupling.
        import scipy.sparse as sp
        from scipy.optimize import linprog
        rr = np.concatenate([ii, m + kk]
                            + [m + k + ii * d + e for e in range(d)])
        cc = np.tile(cols, 2 + d)
        data = np.concatenate([np.ones(2 * m * k)]
                              + [zx[:, e] for e in range(d)])
        a = sp.csc_matrix((data, (rr, cc)), shape=(rows, m * k))
        res = linprog(np.zeros(m * k), A_eq=a, b_eq=b,
                      bounds=(0, None), method="highs")
        if res.status == 0:
            gamma = np.clip(res.x, 0.0, None).reshape(m, k) * mass
            return OrderResult(True, plan=MartingalePlan(gamma, mu, rho))
        return OrderResult(False)
    a = np.zeros((rows, m * k))
    a[ii, cols] = 1.0
    a[m + kk, cols] = 1.0
    for e in range(d):
        a[m + k + ii * d + e, cols] = zx[:, e]
    res = solve_lp(DenseLp(np.zeros(m * k), a, b), tol=tol)
    if res.status == "optimal":
        gamma = np.clip(res.x, 0.0, None).reshape(m, k) * mass
        return OrderResult(True, plan=MartingalePlan(gamma, mu, rho))
    # Farkas y: y'A <= 0 componentwise, y'b > 0. The witness
    # phi(z) = max_i [y_mu_i + <y_bar_i, z - x_i>] is convex with
    # phi(x_i) >= y_mu_i and phi(z_k) <= -y_rho_k, so
    # int phi drho <= -sum rho_k y_rho_k < sum mu_i y_mu_i <= int phi dmu.
    y = res.farkas
    y_mu = y[:m]
    y_bar = y[m + k:].reshape(m, d) / scale
    witness = ConvexWitness(anchors=mu.points.copy(), intercepts=y_mu.copy(),
                            slopes=y_bar.copy())
    return OrderResult(False, witness=witness)


def glue(mu: DiscreteMeasure, nu: DiscreteMeasure, rho: DiscreteMeasure,
         mt1: MartingalePlan, mt2: MartingalePlan) -> Plan3:
    """Conditional-independence gluing of two couplings into a common rho.

    Cell (i, j, z_k) receives mass rho_k * p1(i|k) * p2(j|k)
    = gamma1[i,k] * gamma2[j,k] / rho_k. The third marginal is rho exactly.
    """
    g1, g2 = mt1.gamma, mt2.gamma
    col1 = g1.sum(0)
    col2 = g2.sum(0)
    dead1 = col1 <= 0
    dead2 = col2 <= 0
    if np.any(dead1 != dead2):
        raise DisintegrationFailure(
            "a rho atom receives mass from exactly one side")
    keep = ~dead1
    masses = np.einsum("ik,jk->ijk", g1[:, keep], g2[:, keep]) / \
        rho.weights[keep][None, None, :]
    i_idx, j_idx, k_idx = np.nonzero(masses > 0)
    pair = CenteredPair(mu=mu, nu=nu, shift=np.zeros(mu.dim),
                        mass_mu=mu.total_mass(), mass_nu=nu.total_mass())
    return Plan3(i=i_idx, j=j_idx,
                 z=rho.points[np.nonzero(keep)[0][k_idx]],
                 mass=masses[i_idx, j_idx, k_idx], pair=pair)


def minimal_variance_upper(mu: DiscreteMeasure, nu: DiscreteMeasure,
                           max_atoms: int = 10000):
    """Convolution mu * nu: a feasible convex-order dominant of both
    marginals, with variance(rho) = variance(mu) + variance(nu). Serves as
    an upper bound for the minimal-variance dominant."""
    if len(mu) * len(nu) > max_atoms:
        raise GuardExceeded(
            f"convolution would create {len(mu) * len(nu)} atoms "
            f"(guard {max_atoms})")
    mass = mu.total_mass()
    pts = (mu.points[:, None, :] + nu.points[None, :, :]).reshape(-1, mu.dim)
    wts = (np.outer(mu.weights, nu.weights) / mass).reshape(-1)
    rho = DiscreteMeasure(pts, wts)
    return rho, variance(rho)
