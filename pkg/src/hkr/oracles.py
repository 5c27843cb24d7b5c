"""Closed-form reference solutions and a brute-force grid LP.

These are the independent ground-truth suppliers the test suite checks the
conic solver against: the ordered case (value from variances alone), the
Gaussian covariance calculus (value from the spectrum of N - M), the full
four-point geometry with its two solution regimes, and a grid restriction
of the third marginal that brute-forces the problem as a plain LP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beckmann import SegmentMeasure, assemble_sigma
from .convex_order import MartingalePlan, dominates
from .lp import DenseLp, solve_lp
from .measures import (CenteredPair, DiscreteMeasure, GuardExceeded, diameter,
                       validate_pair, variance)
from .transport3 import JetField, Plan3, third_marginal


class NotOrdered(ValueError):
    pass


class NotPsd(ValueError):
    pass


class Collinear(ValueError):
    pass


class NotCentred(ValueError):
    pass


class ZeroAngle(ValueError):
    pass


def _eig_desc(s: np.ndarray):
    """Symmetric eigendecomposition, eigenvalues descending, the largest
    magnitude component of each eigenvector made positive."""
    lam, vec = np.linalg.eigh(0.5 * (s + s.T))
    lam, vec = lam[::-1].copy(), vec[:, ::-1].copy()
    for k in range(vec.shape[1]):
        i = int(np.argmax(np.abs(vec[:, k])))
        if vec[i, k] < 0:
            vec[:, k] = -vec[:, k]
    return lam, vec


@dataclass(frozen=True)
class CovSplit:
    """Spectral join/meet of two symmetric PSD matrices.

    P_plus projects onto the nonnegative eigenspace of N - M (zero
    eigenvalues count as positive), join = M + (N-M)_+ is the least common
    majorant and meet = M + N - join the greatest common minorant.
    """

    M: np.ndarray
    N: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    P_plus: np.ndarray
    P_minus: np.ndarray
    join: np.ndarray
    meet: np.ndarray

    @staticmethod
    def from_matrices(M, N) -> "CovSplit":
        M = np.asarray(M, dtype=float)
        N = np.asarray(N, dtype=float)
        lam, vec = _eig_desc(N - M)
        nonneg = lam >= 0
        p_plus = vec[:, nonneg] @ vec[:, nonneg].T
        pos_part = (vec * np.maximum(lam, 0.0)) @ vec.T
        join = M + pos_part
        return CovSplit(M=M, N=N, eigenvalues=lam, eigenvectors=vec,
                        P_plus=p_plus, P_minus=np.eye(len(lam)) - p_plus,
                        join=join, meet=M + N - join)


def _require_psd(a: np.ndarray, name: str, tol: float = 1e-10):
    a = np.asarray(a, dtype=float)
    scale = 1.0 + float(np.abs(a).max(initial=0.0))
    if np.abs(a - a.T).max(initial=0.0) > tol * scale:
        raise NotPsd(f"{name} is not symmetric")
    if np.linalg.eigvalsh(0.5 * (a + a.T)).min() < -tol * scale:
        raise NotPsd(f"{name} has a negative eigenvalue")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class GaussianSolution:
    """Transport value and coupling data for centred Gaussian marginals."""

    value: float
    split: CovSplit
    plan_cov: np.ndarray   # covariance of (x, y) under the optimal coupling
    rho_cov: np.ndarray    # covariance of the third marginal
    kernel_cov_x: np.ndarray  # z - x spread conditional on x
    kernel_cov_y: np.ndarray  # z - y spread conditional on y


def gaussian_oracle(M, N) -> GaussianSolution:
    """Value J = half the sum of |eigenvalues| of N - M, with the optimal
    third marginal N(0, join) and block coupling covariance."""
    M = _require_psd(M, "M")
    N = _require_psd(N, "N")
    split = CovSplit.from_matrices(M, N)
    value = 0.5 * float(np.abs(split.eigenvalues).sum())
    d = M.shape[0]
    plan_cov = np.block([[M, split.meet], [split.meet, N]])
    lam, vec = split.eigenvalues, split.eigenvectors
    pos = (vec * np.maximum(lam, 0.0)) @ vec.T
    neg = (vec * np.maximum(-lam, 0.0)) @ vec.T
    return GaussianSolution(value=value, split=split, plan_cov=plan_cov,
                            rho_cov=split.join, kernel_cov_x=pos,
                            kernel_cov_y=neg)


def gauss_hermite_measure(cov, n: int) -> DiscreteMeasure:
    """Tensor-product Gauss-Hermite quantization of N(0, cov).

    n nodes per principal axis, rotated into the covariance eigenbasis.
    Axis moments up to degree 2n - 1 are integrated exactly, so for
    n >= 2 the quantized measure is centred with covariance exactly cov.
    """
    cov = _require_psd(cov, "cov")
    if n < 1:
        raise ValueError("n must be positive")
    nodes, wts = np.polynomial.hermite_e.hermegauss(n)
    wts = wts / wts.sum()
    lam, vec = np.linalg.eigh(cov)
    d = cov.shape[0]
    grids = np.meshgrid(*([nodes] * d), indexing="ij")
    pts_std = np.column_stack([g.ravel() for g in grids])
    w = np.ones(1)
    for _ in range(d):
        w = np.multiply.outer(w, wts).ravel()
    pts = (pts_std * np.sqrt(np.maximum(lam, 0.0))) @ vec.T
    return DiscreteMeasure(pts, w)


@dataclass(frozen=True)
class OrderedSolution:
    value: float
    pair: CenteredPair
    plan: Plan3
    jets: JetField
    coupling: MartingalePlan


def ordered_oracle(mu: DiscreteMeasure, nu: DiscreteMeasure,
                   tol: float = 1e-8) -> OrderedSolution:
    """Exact solution when nu dominates mu in convex order.

    The potential is u(w) = |w|^2/2 and the plan rides any martingale
    coupling with z = y, so the value reduces to half the variance gap.
    """
    res = dominates(nu, mu, tol=tol)
    if not res:
        raise NotOrdered("nu does not dominate mu in convex order")
    pair = validate_pair(mu, nu)
    mass = pair.mass_mu
    gam = res.plan.gamma
    ii, jj = np.nonzero(gam > 0)
    plan = Plan3(i=ii, j=jj, z=pair.nu.points[jj],
                 mass=gam[ii, jj] / mass, pair=pair,
                 info={"status": "Optimal", "source": "ordered closed form"})
    pts = np.vstack([pair.mu.points, pair.nu.points])
    jets = JetField(points=pts, values=0.5 * (pts ** 2).sum(1), grads=pts,
                    n_mu=len(pair.mu))
    value = 0.5 * (variance(nu) - variance(mu))
    return OrderedSolution(value=value, pair=pair, plan=plan, jets=jets,
                           coupling=res.plan)


def _cross(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _intersect_lines(p0, p1, q0, q1):
    """Intersection of line(p0,p1) and line(q0,q1); None if parallel."""
    dp, dq = p1 - p0, q1 - q0
    det = _cross(dp, dq)
    scale = (np.linalg.norm(dp) * np.linalg.norm(dq))
    if abs(det) <= 1e-14 * max(scale, 1e-300):
        return None
    t = _cross(q0 - p0, dq) / det
    return p0 + t * dp


@dataclass(frozen=True)
class RadialPotential:
    """u(r, theta) = h(theta) r^2 / 2 around the pole z0.

    theta is measured from the ray through x1 with the orientation that
    puts x2 at an angle in (0, pi). Branch 1 (coefficient alpha) covers
    theta in [0, pi/(2 alpha)), branch 2 (coefficient beta) the rest of
    the circle, glued C^1 at both seams.
    """

    z0: np.ndarray
    e1: np.ndarray
    orient: float
    alpha: float
    beta: float

    @property
    def theta_split(self) -> float:
        return math.pi / (2 * self.alpha)

    def theta_of(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        v = xi - self.z0
        ang = np.arctan2(self.orient * (self.e1[0] * v[:, 1] - self.e1[1] * v[:, 0]),
                         v @ self.e1)
        return np.mod(ang, 2 * math.pi)

    def _branch(self, theta):
        theta = np.asarray(theta, dtype=float)
        first = theta < self.theta_split
        coef = np.where(first, self.alpha, self.beta)
        arg = np.where(first, theta, 2 * math.pi - theta)
        return first, coef, arg

    def h(self, theta) -> np.ndarray:
        _, coef, arg = self._branch(theta)
        return np.cos(2 * coef * arg)

    def h_prime(self, theta) -> np.ndarray:
        first, coef, arg = self._branch(theta)
        return np.where(first, -1.0, 1.0) * 2 * coef * np.sin(2 * coef * arg)

    def u(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        r2 = ((xi - self.z0) ** 2).sum(1)
        return 0.5 * self.h(self.theta_of(xi)) * r2

    def grad(self, xi) -> np.ndarray:
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        v = xi - self.z0
        r = np.linalg.norm(v, axis=1)
        safe = np.maximum(r, 1e-300)
        er = v / safe[:, None]
        et = self.orient * np.column_stack([-er[:, 1], er[:, 0]])
        th = self.theta_of(xi)
        g = (self.h(th) * r)[:, None] * er + (0.5 * self.h_prime(th) * r)[:, None] * et
        g[r == 0] = 0.0
        return g

    def hessian_eigs(self, theta):
        """(lambda_minus, lambda_plus) of the Hessian at angle theta."""
        _, coef, arg = self._branch(theta)
        return branch_eigenvalues(coef, arg)


def branch_eigenvalues(coef, arg):
    """Hessian eigenvalues of (cos(2c t) r^2 / 2) at polar angle t."""
    coef = np.asarray(coef, dtype=float)
    c2 = np.cos(2 * coef * np.asarray(arg, dtype=float))
    root = np.sqrt(np.maximum(1.0 - (1.0 - coef ** 2) * c2 ** 2, 0.0))
    base = (1.0 - coef ** 2) * c2
    return base - coef * root, base + coef * root


def eigen_scan(alpha: float, n_theta: int = 4001) -> float:
    """max |Hessian eigenvalue| of the glued radial potential over the
    circle, sampled on a dense grid of both branches."""
    beta = alpha / (4 * alpha - 1)
    split = math.pi / (2 * alpha)
    t1 = np.linspace(0.0, split, n_theta)
    t2 = np.linspace(0.0, 2 * math.pi - split, n_theta)
    worst = 0.0
    for coef, arg in ((alpha, t1), (beta, t2)):
        lo, hi = branch_eigenvalues(np.full_like(arg, coef), arg)
        worst = max(worst, float(np.abs(lo).max()), float(np.abs(hi).max()))
    return worst


def case_b_potential(x1, x2, y1, y2) -> RadialPotential:
    """Radial potential for the four-point geometry, pole at the
    intersection of line(x1, y1) and line(x2, y2)."""
    x1, x2, y1, y2 = (np.asarray(p, dtype=float).ravel() for p in (x1, x2, y1, y2))
    if any(len(p) != 2 for p in (x1, x2, y1, y2)):
        raise ValueError("points must be planar")
    d1, d2 = x2 - y2, y1 - x1
    n1, n2 = np.linalg.norm(d1), np.linalg.norm(d2)
    if n1 == 0 or n2 == 0:
        raise ZeroAngle("degenerate edge")
    cosang = float(np.clip(d1 @ d2 / (n1 * n2), -1.0, 1.0))
    angle = math.acos(cosang)
    if angle <= 1e-12:
        raise ZeroAngle("edges are parallel")
    z0 = _intersect_lines(x1, y1, x2, y2)
    if z0 is None:
        raise ZeroAngle("edge lines do not intersect")
    v1 = x1 - z0
    if np.linalg.norm(v1) == 0:
        raise ZeroAngle("x1 sits at the pole")
    e1 = v1 / np.linalg.norm(v1)
    cr = _cross(e1, x2 - z0)
    if cr == 0:
        raise ZeroAngle("x2 on the polar axis")
    alpha = math.pi / (2 * angle)
    return RadialPotential(z0=z0, e1=e1, orient=1.0 if cr > 0 else -1.0,
                           alpha=alpha, beta=alpha / (4 * alpha - 1))


@dataclass(frozen=True)
class TwoPointSolution:
    case: str                      # "A" | "B"
    value: float
    pair: CenteredPair
    plan: Plan3
    jets: JetField
    rho: DiscreteMeasure
    sigma: SegmentMeasure
    radial: RadialPotential | None
    relabel: dict = field(default_factory=dict)


def _two_point_weights(p, q, tol, scale):
    np_, nq = np.linalg.norm(p), np.linalg.norm(q)
    if np_ <= tol * scale or nq <= tol * scale:
        raise NotCentred("an atom sits at the barycentre")
    if np.linalg.norm(nq * p + np_ * q) > tol * scale:
        raise NotCentred("atoms are not anti-parallel through the barycentre")
    return nq / (np_ + nq), np_ / (np_ + nq)


def two_point_oracle(x1, x2, y1, y2, tol: float = 1e-9,
                     force_case: str | None = None) -> TwoPointSolution:
    """Closed-form solution for two atoms against two atoms in the plane.

    Weights follow from the positions (each measure must be centred at the
    origin). The regime is decided by the two opposite-edge inequalities of
    the quadrilateral x1, y2, x2, y1; the spectral construction covers the
    acute regime (A) and the radial potential around the edge-line
    intersection covers the obtuse one (B). ``force_case`` overrides the
    detection, which is meaningful on the shared right-angle boundary where
    both constructions are valid and must agree.
    """
    x1, x2, y1, y2 = (np.asarray(p, dtype=float).ravel() for p in (x1, x2, y1, y2))
    if any(len(p) != 2 for p in (x1, x2, y1, y2)):
        raise ValueError("points must be planar")
    scale = 1.0 + max(float(np.linalg.norm(p)) for p in (x1, x2, y1, y2))
    mu1, mu2 = _two_point_weights(x1, x2, tol, scale)
    nu1, nu2 = _two_point_weights(y1, y2, tol, scale)
    if abs(_cross(x1, y1)) <= tol * scale * scale:
        raise Collinear("all four points lie on one line")
    mu = DiscreteMeasure([x1, x2], [mu1, mu2])
    nu = DiscreteMeasure([y1, y2], [nu1, nu2])
    pair = validate_pair(mu, nu)
    X, Y = pair.mu.points, pair.nu.points
    w_mu, w_nu = pair.mu.weights, pair.nu.weights
    s1 = float((X[1] - Y[1]) @ (Y[0] - X[0]))
    s2 = float((X[0] - Y[1]) @ (Y[0] - X[1]))
    case = "A" if min(s1, s2) >= -tol * scale * scale else "B"
    if force_case is not None:
        case = force_case
    if case == "A":
        return _solve_case_a(pair, X, Y, w_mu, w_nu)
    return _solve_case_b(pair, X, Y, w_mu, w_nu, tol * scale)


def _solve_case_a(pair, X, Y, w_mu, w_nu) -> TwoPointSolution:
    M = -0.5 * (np.outer(X[0], X[1]) + np.outer(X[1], X[0]))
    N = -0.5 * (np.outer(Y[0], Y[1]) + np.outer(Y[1], Y[0]))
    lam, vec = _eig_desc(N - M)
    b, a = vec[:, 0], vec[:, 1]

    def u(w):
        return 0.5 * ((w @ b) ** 2 - (w @ a) ** 2)

    value = float(w_nu @ u(Y) - w_mu @ u(X))
    ii, jj, zz, gg = [], [], [], []
    for i in range(2):
        for j in range(2):
            gam = w_mu[i] * float(b @ (Y[1 - j] - X[i])) / float(b @ (Y[1 - j] - Y[j]))
            if gam > 1e-13:
                ii.append(i)
                jj.append(j)
                zz.append(float(a @ X[i]) * a + float(b @ Y[j]) * b)
                gg.append(gam)
    plan = Plan3(i=ii, j=jj, z=np.array(zz), mass=gg, pair=pair,
                 info={"status": "Optimal", "source": "two-point case A"})
    pts = np.vstack([X, Y])
    jets = JetField(points=pts, values=u(pts),
                    grads=np.outer(pts @ b, b) - np.outer(pts @ a, a), n_mu=2)
    return TwoPointSolution(case="A", value=value, pair=pair, plan=plan,
                            jets=jets, rho=third_marginal(plan),
                            sigma=assemble_sigma(plan), radial=None,
                            relabel={"swap_x": False, "swap_y": False})


def _solve_case_b(pair, X, Y, w_mu, w_nu, tol) -> TwoPointSolution:
    # relabel so that <x1,y1> >= 0 and |x1||y2| <= |x2||y1|
    chosen = None
    for sx in (False, True):
        for sy in (False, True):
            px = (1, 0) if sx else (0, 1)
            py = (1, 0) if sy else (0, 1)
            xa, xb = X[px[0]], X[px[1]]
            ya, yb = Y[py[0]], Y[py[1]]
            if xa @ ya < -tol:
                continue
            if np.linalg.norm(xa) * np.linalg.norm(yb) > \
               np.linalg.norm(xb) * np.linalg.norm(ya) * (1 + 1e-12) + tol:
                continue
            chosen = (px, py)
            break
        if chosen:
            break
    if chosen is None:
        raise RuntimeError("no labeling satisfies the obtuse-case conventions")
    px, py = chosen
    xa, xb = X[px[0]], X[px[1]]
    ya, yb = Y[py[0]], Y[py[1]]
    m1, m2 = w_mu[px[0]], w_mu[px[1]]
    n1, n2 = w_nu[py[0]], w_nu[py[1]]
    z0 = _intersect_lines(xa, ya, xb, yb)
    if z0 is None:
        raise Collinear("edge lines are parallel")

    def r2(p):
        return float(((p - z0) ** 2).sum())

    value = (n1 * 0.5 * r2(ya) - n2 * 0.5 * r2(yb)
             - m1 * 0.5 * r2(xa) + m2 * 0.5 * r2(xb))
    ii = [px[0], px[1]]
    jj = [py[0], py[1]]
    zz = [ya, xb]
    gg = [n1, m2]
    if m1 - n1 > 1e-14:
        ii.append(px[0])
        jj.append(py[1])
        zz.append(z0)
        gg.append(m1 - n1)
    plan = Plan3(i=ii, j=jj, z=np.array(zz), mass=gg, pair=pair,
                 info={"status": "Optimal", "source": "two-point case B"})
    # jets in original atom order: positive branch holds x1', y1', negative x2', y2'
    vals = np.zeros(4)
    grads = np.zeros((4, 2))
    for pos, p, sgn in ((px[0], xa, 1.0), (px[1], xb, -1.0),
                        (2 + py[0], ya, 1.0), (2 + py[1], yb, -1.0)):
        vals[pos] = sgn * 0.5 * r2(p)
        grads[pos] = sgn * (p - z0)
    jets = JetField(points=np.vstack([X, Y]), values=vals, grads=grads, n_mu=2)
    radial = case_b_potential(xa, xb, ya, yb)
    return TwoPointSolution(case="B", value=value, pair=pair, plan=plan,
                            jets=jets, rho=third_marginal(plan),
                            sigma=assemble_sigma(plan), radial=radial,
                            relabel={"swap_x": px[0] == 1, "swap_y": py[0] == 1})


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned lattice for the brute-force restriction of z.

    ``h`` defaults to diameter/32. ``bounds`` (lo, hi) pins the node box
    explicitly; the default expands the union-of-balls bounding box by one
    spacing so the equality rows stay feasible after restriction.
    """

    h: float | None = None
    bounds: tuple | None = None
    max_atoms: int = 10000


def _grid_nodes(pair: CenteredPair, spec: GridSpec):
    h = spec.h if spec.h is not None else pair.diameter() / 32.0
    if h <= 0:
        raise ValueError("grid spacing must be positive")
    X, Y = pair.mu.points, pair.nu.points
    mid = 0.5 * (X[:, None, :] + Y[None, :, :])
    rad = 0.5 * np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=2)
    lo = (mid - rad[:, :, None]).reshape(-1, pair.dim).min(0)
    hi = (mid + rad[:, :, None]).reshape(-1, pair.dim).max(0)
    if spec.bounds is not None:
        lo, hi = (np.asarray(v, dtype=float) for v in spec.bounds)
    else:
        lo, hi = lo - h, hi + h
    eps = 1e-9 * h
    axes = [np.arange(math.ceil((lo[e] - eps) / h), math.floor((hi[e] + eps) / h) + 1) * h
            for e in range(pair.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh]), h


def grid_oracle(pair: CenteredPair, spec: GridSpec | None = None):
    """Brute-force upper bound: restrict z to lattice nodes and solve the
    resulting LP exactly. Returns (value, plan)."""
    if spec is None:
        spec = GridSpec()
    nodes, h = _grid_nodes(pair, spec)
    m, n, d = len(pair.mu), len(pair.nu), pair.dim
    K = len(nodes)
    if m * n * K > spec.max_atoms:
        raise GuardExceeded(
            f"grid LP would have {m * n * K} columns (guard {spec.max_atoms})")
    X, Y = pair.mu.points, pair.nu.points
    cols = np.arange(m * n * K)
    ij, kk = np.divmod(cols, K)
    ii, jj = np.divmod(ij, n)
    rows = m + n + (m + n) * d
    scale = 1.0 + pair.diameter()
    a = np.zeros((rows, len(cols)))
    a[ii, cols] = 1.0
    a[m + jj, cols] = 1.0
    zx = (nodes[kk] - X[ii]) / scale
    zy = (nodes[kk] - Y[jj]) / scale
    for e in range(d):
        a[m + n + ii * d + e, cols] = zx[:, e]
        a[m + n + (m + jj) * d + e, cols] = zy[:, e]
    b = np.concatenate([pair.mu.weights, pair.nu.weights, np.zeros((m + n) * d)])
    costs = 0.5 * (((nodes[kk] - X[ii]) ** 2).sum(1) + ((nodes[kk] - Y[jj]) ** 2).sum(1))
    res = solve_lp(DenseLp(costs, a, b), tol=1e-9)
    if res.status != "optimal":
        raise RuntimeError(f"grid LP did not solve: {res.status}")
    keep = res.x > 0
    plan = Plan3(i=ii[keep], j=jj[keep], z=nodes[kk[keep]], mass=res.x[keep],
                 pair=pair, info={"status": "Optimal", "source": "grid LP",
                                  "h": h, "nodes": K})
    return float(res.value), plan
