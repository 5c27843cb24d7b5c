"""Three-marginal transport plans, potential jets, and optimality certificates.

The discrete problem couples mu and nu through a free third marginal: a plan
assigns mass to cells (x_i, y_j, z) subject to both marginals and to the
equilibrium (martingale) constraints, and its cost is the three-point energy
c(x, y, z) = (|z-x|^2 + |z-y|^2)/2. Optimality of a plan is certified against
a dual potential u, carried as jets (value, gradient) at the atoms, through a
three-point equality that must hold on the support and as an inequality
everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measures import DiscreteMeasure, CenteredPair, diameter, variance


class CertificateFailure(RuntimeError):
    """Solver claimed optimality but the recovered jets fail the certificate."""


def cost_xyz(x, y, z):
    """Cell cost c(x,y,z) = (|z-x|^2 + |z-y|^2)/2, broadcasting over rows."""
    x, y, z = np.atleast_2d(x), np.atleast_2d(y), np.atleast_2d(z)
    return 0.5 * (((z - x) ** 2).sum(-1) + ((z - y) ** 2).sum(-1))


@dataclass(frozen=True)
class Plan3:
    """Sparse three-marginal plan over a centred pair.

    Cells are parallel arrays: ``i[k]`` indexes a mu atom, ``j[k]`` a nu atom,
    ``z[k]`` is the cell's third point and ``mass[k] > 0`` its weight.
    """

    i: np.ndarray
    j: np.ndarray
    z: np.ndarray
    mass: np.ndarray
    pair: CenteredPair
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        i = np.asarray(self.i, dtype=int)
        j = np.asarray(self.j, dtype=int)
        z = np.atleast_2d(np.asarray(self.z, dtype=float))
        mass = np.asarray(self.mass, dtype=float)
        if not (len(i) == len(j) == len(z) == len(mass)):
            raise ValueError("cell arrays must have equal length")
        if len(mass) and mass.min() <= 0:
            raise ValueError("cell masses must be positive")
        for name, val in (("i", i), ("j", j), ("z", z), ("mass", mass)):
            object.__setattr__(self, name, val)

    def __len__(self):
        return len(self.mass)

    @property
    def x(self):
        return self.pair.mu.points[self.i]

    @property
    def y(self):
        return self.pair.nu.points[self.j]

    def cost(self) -> float:
        if len(self) == 0:
            return 0.0
        return float(self.mass @ cost_xyz(self.x, self.y, self.z))

    def marginal_residuals(self):
        """(per-mu-atom, per-nu-atom) absolute row/column mass errors."""
        mu_w = np.zeros(len(self.pair.mu))
        nu_w = np.zeros(len(self.pair.nu))
        np.add.at(mu_w, self.i, self.mass)
        np.add.at(nu_w, self.j, self.mass)
        return np.abs(mu_w - self.pair.mu.weights), np.abs(nu_w - self.pair.nu.weights)

    def martingale_residuals(self):
        """Norms of the equilibrium sums, per mu atom and per nu atom."""
        d = self.pair.dim
        acc_mu = np.zeros((len(self.pair.mu), d))
        acc_nu = np.zeros((len(self.pair.nu), d))
        if len(self):
            np.add.at(acc_mu, self.i, self.mass[:, None] * (self.z - self.x))
            np.add.at(acc_nu, self.j, self.mass[:, None] * (self.z - self.y))
        return np.linalg.norm(acc_mu, axis=1), np.linalg.norm(acc_nu, axis=1)

    def check_invariants(self, tol: float = 1e-8) -> bool:
        """Marginal and mass-relative martingale residuals within tol."""
        rm, rn = self.marginal_residuals()
        em, en = self.martingale_residuals()
        scale = 1.0 + diameter(self.pair.mu, self.pair.nu)
        ok_marg = rm.max(initial=0) <= tol * (1 + self.pair.mass_mu) and \
            rn.max(initial=0) <= tol * (1 + self.pair.mass_nu)
        ok_mart = np.all(em <= tol * scale * np.maximum(self.pair.mu.weights, tol)) and \
            np.all(en <= tol * scale * np.maximum(self.pair.nu.weights, tol))
        return bool(ok_marg and ok_mart)


@dataclass(frozen=True)
class JetField:
    """First-order jets (u, grad u) at the mu atoms followed by the nu atoms."""

    points: np.ndarray  # (m+n, d)
    values: np.ndarray  # (m+n,)
    grads: np.ndarray   # (m+n, d)
    n_mu: int

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.asarray(self.values, dtype=float)
        grads = np.atleast_2d(np.asarray(self.grads, dtype=float))
        if not (len(pts) == len(vals) == len(grads)):
            raise ValueError("jet arrays must have equal length")
        if not 0 <= self.n_mu <= len(vals):
            raise ValueError("n_mu out of range")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "grads", grads)

    @property
    def mu_values(self):
        return self.values[: self.n_mu]

    @property
    def mu_grads(self):
        return self.grads[: self.n_mu]

    @property
    def nu_values(self):
        return self.values[self.n_mu:]

    @property
    def nu_grads(self):
        return self.grads[self.n_mu:]

    def z_star(self, i, j):
        """Concave-maximizer points z*_ij for mu-atom rows i, nu-atom rows j."""
        x = self.points[: self.n_mu][i]
        y = self.points[self.n_mu:][j]
        return 0.5 * (x + y) + 0.5 * (self.nu_grads[j] - self.mu_grads[i])

    def to_records(self):
        return [
            {"x": p.tolist(), "u": float(v), "grad": g.tolist()}
            for p, v, g in zip(self.points, self.values, self.grads)
        ]


def _pair_alpha(u1, g1, w1, u2, g2, w2):
    """alpha(w1, w2): excess of the tangent-difference over the cost at z*.

    With z* = (w1+w2)/2 + (g2-g1)/2 the concave quadratic
    z -> [u2 + <g2, z-w2>] - [u1 + <g1, z-w1>] - c(w1, w2, z)
    attains its maximum; expanding at z* gives the closed form below. The
    jets extend to a function with lip(grad u) <= 1 iff alpha <= 0 for all
    ordered pairs.
    """
    du = u2[None, :] - u1[:, None]
    gw = g1 @ w2.T - (g1 * w1).sum(1)[:, None] + (g2 * w2).sum(1)[None, :] - w1 @ g2.T
    w_sq = ((w1 ** 2).sum(1)[:, None] + (w2 ** 2).sum(1)[None, :] - 2 * (w1 @ w2.T))
    g_sq = ((g1 ** 2).sum(1)[:, None] + (g2 ** 2).sum(1)[None, :] - 2 * (g1 @ g2.T))
    return du - 0.5 * gw - 0.25 * w_sq + 0.25 * g_sq


def check_jets(jets: JetField, tol: float = 1e-9) -> bool:
    """Pairwise Le Gruyer condition over all ordered jet pairs."""
    w, u, g = jets.points, jets.values, jets.grads
    alpha = _pair_alpha(u, g, w, u, g, w)
    return bool(alpha.max() <= tol)


@dataclass(frozen=True)
class CertificateReport:
    passed: bool
    max_support_residual: float
    worst_cell: tuple
    max_pair_violation: float
    worst_pair: tuple
    tol: float

    def __bool__(self):
        return self.passed


def check_certificate(plan: Plan3, jets: JetField, tol: float) -> CertificateReport:
    """Three-point equality on the support, inequality at z* for all pairs.

    Per support cell the residual is
    [u(y) + <grad u(y), z-y>] - [u(x) + <grad u(x), z-x>] - c(x,y,z),
    required to vanish within tol; over every (i,j) pair the same expression
    evaluated at z*_ij must be <= tol.
    """
    m = jets.n_mu
    xw, yw = jets.points[:m], jets.points[m:]
    if len(plan):
        x, y, z = plan.x, plan.y, plan.z
        uy = jets.nu_values[plan.j] + ((z - y) * jets.nu_grads[plan.j]).sum(1)
        ux = jets.mu_values[plan.i] + ((z - x) * jets.mu_grads[plan.i]).sum(1)
        res = uy - ux - cost_xyz(x, y, z)
        k = int(np.argmax(np.abs(res)))
        max_support = float(np.abs(res[k]))
        worst_cell = (int(plan.i[k]), int(plan.j[k]))
    else:
        max_support, worst_cell = 0.0, (-1, -1)

    alpha = _pair_alpha(jets.mu_values, jets.mu_grads, xw,
                        jets.nu_values, jets.nu_grads, yw)
    ij = np.unravel_index(np.argmax(alpha), alpha.shape)
    max_pair = float(alpha[ij])
    passed = max_support <= tol and max_pair <= tol
    return CertificateReport(passed, max_support, worst_cell,
                             max_pair, (int(ij[0]), int(ij[1])), tol)


def third_marginal(plan: Plan3) -> DiscreteMeasure:
    """Collapse plan cells to the measure carried by the z points.

    Solver noise splits what is analytically one atom, so z points within
    1e-9 * diameter of each other are merged (mass-weighted positions).
    """
    if len(plan) == 0:
        raise ValueError("empty plan has no third marginal")
    merge = 1e-9 * max(plan.pair.diameter(), 1e-30)
    z, w = plan.z, plan.mass
    # coarse grouping on a grid finer than the merge radius
    keys = np.round(z / (0.25 * merge)).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    n_grp = inverse.max() + 1
    gw = np.zeros(n_grp)
    gz = np.zeros((n_grp, z.shape[1]))
    np.add.at(gw, inverse, w)
    np.add.at(gz, inverse, w[:, None] * z)
    gz /= gw[:, None]
    # union-find pass over group representatives for borderline splits
    parent = np.arange(n_grp)

    def find(r):
        while parent[r] != r:
            parent[r] = parent[parent[r]]
            r = parent[r]
        return r

    dist = np.linalg.norm(gz[:, None, :] - gz[None, :, :], axis=2)
    for aa, bb in zip(*np.nonzero(dist <= merge)):
        if aa < bb:
            ra, rb = find(aa), find(bb)
            if ra != rb:
                parent[rb] = ra
    roots = np.array([find(r) for r in range(n_grp)])
    _, root_inv = np.unique(roots, return_inverse=True)
    n_at = root_inv.max() + 1
    aw = np.zeros(n_at)
    az = np.zeros((n_at, z.shape[1]))
    np.add.at(aw, root_inv, gw)
    np.add.at(az, root_inv, gw[:, None] * gz)
    az /= aw[:, None]
    return DiscreteMeasure(az, aw)


def scan_support_bound(plan: Plan3, tol: float = 1e-9) -> bool:
    """Every z inside the closed ball on the diameter segment [x_i, y_j]."""
    if len(plan) == 0:
        return True
    mid = 0.5 * (plan.x + plan.y)
    rad = 0.5 * np.linalg.norm(plan.x - plan.y, axis=1)
    off = np.linalg.norm(plan.z - mid, axis=1)
    return bool(np.all(off <= rad + tol))


def solve_three_marginal(pair: CenteredPair, opts=None):
    """Solve the discrete three-marginal problem for a validated pair.

    Returns (plan, jets, value) where value = plan.cost(). Jets are read
    off the duals via u(x_i) = |x_i|^2/2 - a_i, grad u(x_i) = x_i - p_i,
    u(y_j) = b_j - |y_j|^2/2, grad u(y_j) = q_j - y_j, then validated by
    check_certificate; a certificate failure on an Optimal solve raises.
    """
    from .conic import PerspectiveProgram, SolverOptions, solve_perspective

    if opts is None:
        opts = SolverOptions()
    prog = PerspectiveProgram(
        x_atoms=pair.mu.points, y_atoms=pair.nu.points,
        mu=pair.mu.weights, nu=pair.nu.weights,
    )
    sol = solve_perspective(prog, opts)

    xs, ys = pair.mu.points, pair.nu.points
    u_mu = 0.5 * (xs ** 2).sum(1) - sol.duals_a
    g_mu = xs - sol.duals_p
    u_nu = sol.duals_b - 0.5 * (ys ** 2).sum(1)
    g_nu = sol.duals_q - ys
    jets = JetField(
        points=np.vstack([xs, ys]),
        values=np.concatenate([u_mu, u_nu]),
        grads=np.vstack([g_mu, g_nu]),
        n_mu=len(pair.mu),
    )

    if sol.kkt.get("polished"):
        # polished supports are exact; re-thresholding would shave the
        # mass (and cost) of genuinely light cells
        keep = sol.gamma > 0
    else:
        keep = sol.gamma > opts.support_threshold * max(sol.gamma.max(), 1e-300)
    idx = np.nonzero(keep)[0]
    gam = sol.gamma[idx]
    zz = sol.m[idx] / gam[:, None]
    ii, jj = np.unravel_index(idx, (len(pair.mu), len(pair.nu)))
    info = {
        "status": sol.status, "iterations": sol.iterations,
        "primal_value": sol.primal_value, "dual_value": sol.dual_value,
        "kkt": dict(sol.kkt),
    }
    plan = Plan3(i=ii, j=jj, z=zz, mass=gam, pair=pair, info=info)
    value = plan.cost()

    cert_tol = opts.certificate_tol
    if cert_tol is None:
        cert_tol = 1e-5 * (1.0 + pair.diameter() ** 2)
    report = check_certificate(plan, jets, cert_tol)
    if sol.status == "Optimal" and not report.passed:
        raise CertificateFailure(
            f"optimal status but certificate failed: support residual "
            f"{report.max_support_residual:.3e}, pair violation "
            f"{report.max_pair_violation:.3e}, tol {cert_tol:.3e}")
    return plan, jets, value
