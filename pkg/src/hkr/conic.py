"""First-order conic solver for the perspective-quadratic transport program.

The program couples a mass gamma_ij >= 0 and a moment vector m_ij per cell
(i, j) of the product of two atom sets:

    minimize   sum_ij (|m - gamma x_i|^2 + |m - gamma y_j|^2) / (2 gamma)
    subject to sum_j gamma_ij = mu_i,      sum_i gamma_ij = nu_j,
               sum_j (m_ij - gamma_ij x_i) = 0   per i,
               sum_i (m_ij - gamma_ij y_j) = 0   per j.

With w_ij = (x_i+y_j)/2, s = m - gamma w and the epigraph variable t, the
objective is linear and the per-cell constraint is the rotated second-order
cone |s|^2 <= 2 gamma t. The solver is an over-relaxed ADMM splitting between
that cone product and the affine constraint set (projected through a dense
Cholesky factor of A A', with dependent rows pruned by pivoted Cholesky),
followed by an active-set Gauss-Newton polish of the KKT system on the
identified support. Duals are reported in the convention where
phi(x_i) = duals_a[i], grad phi(x_i) = duals_p[i] (phi = |.|^2/2 - u) and
psi(y_j) = duals_b[j], grad psi(y_j) = duals_q[j] (psi = |.|^2/2 + u).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lapack

from .lp import DenseLp, LpResult, NumericalBreakdown, solve_lp  # noqa: F401  (re-export)

_SQ2 = np.sqrt(2.0)


@dataclass
class SolverOptions:
    tol: float = 1e-8
    gap_tol: float | None = None  # defaults to tol
    max_iters: int = 200000
    support_threshold: float = 1e-7
    certificate_tol: float | None = None
    rho: float = 1.0
    over_relax: float = 1.8
    check_every: int = 25
    polish: bool = True
    polish_cap: int = 3000
    verbose: bool = False


@dataclass(frozen=True)
class PerspectiveProgram:
    """Problem data; the constraint rows are fixed by the formulation above."""

    x_atoms: np.ndarray
    y_atoms: np.ndarray
    mu: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.x_atoms, dtype=float))
        Y = np.atleast_2d(np.asarray(self.y_atoms, dtype=float))
        mu = np.asarray(self.mu, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if X.shape[1] != Y.shape[1]:
            raise ValueError("atom dimensions differ")
        if len(X) != len(mu) or len(Y) != len(nu):
            raise ValueError("weights do not match atoms")
        for name, val in (("x_atoms", X), ("y_atoms", Y), ("mu", mu), ("nu", nu)):
            object.__setattr__(self, name, val)

    @property
    def num_cells(self) -> int:
        return len(self.mu) * len(self.nu)

    @property
    def dim(self) -> int:
        return self.x_atoms.shape[1]


@dataclass
class ConicSolution:
    gamma: np.ndarray        # (m*n,) cell masses, i-major
    m: np.ndarray            # (m*n, d) cell moments, m = gamma * z
    duals_a: np.ndarray      # (m,)  phi(x_i)
    duals_b: np.ndarray      # (n,)  psi(y_j)
    duals_p: np.ndarray      # (m,d) grad phi(x_i)
    duals_q: np.ndarray      # (n,d) grad psi(y_j)
    primal_value: float
    dual_value: float
    status: str              # "Optimal" | "MaxIters" | "Infeasible"
    iterations: int = 0
    kkt: dict = field(default_factory=dict)


class _Workspace:
    """Normalized data and the affine-projection factorization."""

    def __init__(self, prog: PerspectiveProgram, tol: float):
        self.mass = float(prog.mu.sum())
        self.len_scale = 1.0 + float(np.sqrt(
            max((prog.x_atoms ** 2).sum(1).max(initial=0.0),
                (prog.y_atoms ** 2).sum(1).max(initial=0.0))))
        self.X = prog.x_atoms / self.len_scale
        self.Y = prog.y_atoms / self.len_scale
        self.mu = prog.mu / self.mass
        self.nu = prog.nu / self.mass
        self.m_at, self.d = self.X.shape
        self.n_at = len(self.Y)
        # W_ij = (y_j - x_i)/2, K_ij = |x_i - y_j|^2 / 4
        self.W = 0.5 * (self.Y[None, :, :] - self.X[:, None, :])
        self.K = (self.W ** 2).sum(-1)
        m, n, d = self.m_at, self.n_at, self.d
        self.oB = m
        self.oP = m + n
        self.oQ = m + n + m * d
        self.rows = m + n + (m + n) * d
        self.b = np.concatenate([self.mu, self.nu, np.zeros((m + n) * d)])
        self._factor(tol)

    def a_apply(self, G, S):
        r1 = G.sum(1)
        r2 = G.sum(0)
        gw = G[:, :, None] * self.W
        r3 = S.sum(1) + gw.sum(1)
        r4 = S.sum(0) - gw.sum(0)
        return np.concatenate([r1, r2, r3.ravel(), r4.ravel()])

    def at_apply(self, y):
        m, n, d = self.m_at, self.n_at, self.d
        a = y[: m]
        bb = y[self.oB: self.oB + n]
        P = y[self.oP: self.oP + m * d].reshape(m, d)
        Q = y[self.oQ:].reshape(n, d)
        Gc = a[:, None] + bb[None, :] + ((P[:, None, :] - Q[None, :, :]) * self.W).sum(-1)
        Sc = np.broadcast_to(P[:, None, :] + Q[None, :, :], (m, n, d)).copy()
        return Gc, Sc

    def _assemble_aat(self):
        m, n, d = self.m_at, self.n_at, self.d
        R = self.rows
        W = self.W
        aat = np.zeros((R, R))
        aat[:m, :m] = n * np.eye(m)
        aat[self.oB:self.oB + n, self.oB:self.oB + n] = m * np.eye(n)
        aat[:m, self.oB:self.oB + n] = 1.0
        sw_mu = W.sum(1)   # (m, d)
        sw_nu = W.sum(0)   # (n, d)
        im = np.arange(m)
        jn = np.arange(n)
        for e in range(d):
            aat[im, self.oP + im * d + e] = sw_mu[:, e]
            aat[self.oB + jn, self.oQ + jn * d + e] = -sw_nu[:, e]
        aat[:m, self.oQ:] = -W.reshape(m, n * d)
        aat[self.oB:self.oB + n, self.oP:self.oP + m * d] = \
            W.transpose(1, 0, 2).reshape(n, m * d)
        g_mu = np.einsum("ijd,ije->ide", W, W)
        g_nu = np.einsum("ijd,ije->jde", W, W)
        for e in range(d):
            for f in range(d):
                aat[self.oP + im * d + e, self.oP + im * d + f] = \
                    g_mu[:, e, f] + (n if e == f else 0.0)
                aat[self.oQ + jn * d + e, self.oQ + jn * d + f] = \
                    g_nu[:, e, f] + (m if e == f else 0.0)
        cross = -np.einsum("ijd,ije->idje", W, W)
        cross += np.einsum("ij,de->idje", np.ones((m, n)), np.eye(d))
        aat[self.oP:self.oP + m * d, self.oQ:] = cross.reshape(m * d, n * d)
        lower = np.tril_indices(R, -1)
        aat[lower] = aat.T[lower]
        return aat

    def _factor(self, tol):
        aat = self._assemble_aat()
        diag_max = aat.diagonal().max()
        c, piv, rank, _ = lapack.dpstrf(aat, lower=1, tol=1e-12 * diag_max)
        kept = np.sort(piv[:rank] - 1)
        self.kept = kept
        self.dropped = np.setdiff1d(np.arange(self.rows), kept)
        sub = aat[np.ix_(kept, kept)]
        sub = sub + (1e-14 * diag_max) * np.eye(len(kept))
        self.chol = cho_factor(sub, lower=True)
        self.aat = aat
        # consistency of the dropped (dependent) rows with the rhs
        self.infeasible_rows = []
        for r in self.dropped:
            h = cho_solve(self.chol, aat[kept, r])
            beta = self.b[r] - h @ self.b[kept]
            if abs(beta) > 1e2 * tol * (1.0 + np.abs(self.b).max()):
                y_cert = np.zeros(self.rows)
                y_cert[r] = 1.0
                y_cert[kept] -= h
                self.infeasible_rows.append((int(r), float(beta), y_cert))

    def project_affine(self, G, S):
        """Projection onto {A u = b}; returns the point and the multiplier."""
        r = self.a_apply(G, S) - self.b
        w = np.zeros(self.rows)
        w[self.kept] = cho_solve(self.chol, r[self.kept])
        Gc, Sc = self.at_apply(w)
        return G - Gc, S - Sc, w

    def dual_split(self, y):
        m, n, d = self.m_at, self.n_at, self.d
        return (y[:m], y[self.oB:self.oB + n],
                y[self.oP:self.oP + m * d].reshape(m, d),
                y[self.oQ:].reshape(n, d))

    def dual_feas_matrix(self, a, bb, P, Q):
        """D_ij <= 0 is per-cell dual cone feasibility; D = 0 on the support."""
        pm = P[:, None, :] - Q[None, :, :]
        pp = P[:, None, :] + Q[None, :, :]
        return (a[:, None] + bb[None, :] + (pm * self.W).sum(-1)
                + 0.25 * (pp ** 2).sum(-1) - self.K)


def _project_cone(G, S, T):
    """Project onto the product of cones {|s|^2 <= 2 gamma t, gamma,t >= 0}."""
    r = (G + T) / _SQ2
    w = (G - T) / _SQ2
    h2 = w ** 2 + (S ** 2).sum(-1)
    eta = np.sqrt(h2)
    inside = eta <= r
    zero = eta <= -r
    boundary = ~(inside | zero)
    f = np.zeros_like(G)
    np.divide(r + eta, 2 * eta, out=f, where=boundary & (eta > 0))
    r_new = np.where(inside, r, np.where(zero, 0.0, 0.5 * (r + eta)))
    w_new = np.where(inside, w, f * w)
    S_new = np.where(inside[..., None], S, f[..., None] * S)
    G_new = (r_new + w_new) / _SQ2
    T_new = (r_new - w_new) / _SQ2
    return G_new, S_new, T_new


def _kkt_system(ws, si, sj, gam, a, bb, P, Q):
    """Residual and sparse Jacobian of the support KKT equations.

    Unknown order: [gamma (ns); a (m); b (n); P (m*d); Q (n*d)].
    Equations: marginal sums, martingale sums at z = (x+y)/2 + (P_i+Q_j)/2,
    and D = 0 on the support cells.
    """
    import scipy.sparse as sp

    m, n, d = ws.m_at, ws.n_at, ws.d
    ns = len(si)
    nv = ws.rows
    oA, oB, oP, oQ = ns, ns + m, ns + m + n, ns + m + n + m * d
    z = 0.5 * (ws.X[si] + ws.Y[sj]) + 0.5 * (P[si] + Q[sj])
    zx = z - ws.X[si]
    zy = z - ws.Y[sj]

    e1 = -ws.mu.copy()
    e2 = -ws.nu.copy()
    np.add.at(e1, si, gam)
    np.add.at(e2, sj, gam)
    e3 = np.zeros((m, d))
    e4 = np.zeros((n, d))
    np.add.at(e3, si, gam[:, None] * zx)
    np.add.at(e4, sj, gam[:, None] * zy)
    w_s = ws.W[si, sj]
    e5 = (a[si] + bb[sj] + ((P[si] - Q[sj]) * w_s).sum(-1)
          + 0.25 * ((P[si] + Q[sj]) ** 2).sum(-1) - ws.K[si, sj])
    F = np.concatenate([e1, e2, e3.ravel(), e4.ravel(), e5])

    gsum_mu = np.zeros(m)
    gsum_nu = np.zeros(n)
    np.add.at(gsum_mu, si, gam)
    np.add.at(gsum_nu, sj, gam)
    rows, cols, vals = [], [], []

    def put(r, c, v):
        rows.append(np.asarray(r, dtype=int))
        cols.append(np.asarray(c, dtype=int))
        vals.append(np.asarray(v, dtype=float))

    ar = np.arange(ns)
    put(si, ar, np.ones(ns))                       # E1 / d gamma
    put(m + sj, ar, np.ones(ns))                   # E2 / d gamma
    r3 = m + n + si * d                            # E3 row base per cell
    r4 = m + n + m * d + sj * d
    r5 = m + n + (m + n) * d + ar
    for e in range(d):
        put(r3 + e, ar, zx[:, e])                  # E3 / d gamma
        put(r3 + e, oP + si * d + e, 0.5 * gam)    # E3 / d P_i
        put(r3 + e, oQ + sj * d + e, 0.5 * gam)    # E3 / d Q_j
        put(r4 + e, ar, zy[:, e])                  # E4 / d gamma
        put(r4 + e, oP + si * d + e, 0.5 * gam)    # E4 / d P_i
        put(r4 + e, oQ + sj * d + e, 0.5 * gam)    # E4 / d Q_j
        put(r5, oP + si * d + e, zx[:, e])         # E5 / d P_i
        put(r5, oQ + sj * d + e, zy[:, e])         # E5 / d Q_j
    put(r5, oA + si, np.ones(ns))                  # E5 / d a
    put(r5, oB + sj, np.ones(ns))                  # E5 / d b
    jac = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nv + ns, ns + nv)).tocsr()
    return F, jac


def _polish(ws, G, duals, opts):
    """Active-set Gauss-Newton refinement of the support KKT system.

    Solves the coupled equations for (gamma, duals) on the support guessed
    from the first-order iterate, dropping cells whose mass turns negative
    and adding cells where the duals turn infeasible. Returns None when it
    cannot certify a solution; the caller then continues the ADMM loop.
    """
    gmax = G.max(initial=0.0)
    if gmax <= 0:
        return None
    sup = G > max(1e-8 * gmax, 1e-14)
    cap = max(opts.polish_cap, 2 * ws.rows)
    if sup.sum() > cap or sup.sum() == 0:
        return None
    si, sj = np.nonzero(sup)
    gam = G[si, sj].copy()
    a, bb, P, Q = (v.copy() for v in duals)
    return _support_gn(ws, si, sj, gam, (a, bb, P, Q), cap,
                       verbose=opts.verbose)


def _support_gn(ws, si, sj, gam, duals, cap, verbose=False):
    """Gauss-Newton with active-set moves on a given starting support.

    Three tolerance tiers: tol_kkt is the clean-convergence target,
    accept_tol is good enough to return (rank-deficient supports converge
    linearly and may stall shy of tol_kkt), and move_tol is the accuracy at
    which the iterate still identifies support repairs — cells with negative
    mass, dual-infeasible cells to bring in, and inconsistent equality rows
    whose cells have to go.
    """
    a, bb, P, Q = duals
    m, n, d = ws.m_at, ws.n_at, ws.d
    scale = 1.0 + ws.K.max(initial=0.0)
    tol_kkt = 5e-13 * scale
    accept_tol = 1e-9 * scale
    move_tol = 1e-6 * scale

    for _outer in range(30):
        ns = len(si)
        nv = ws.rows
        lam = 1e-12
        F, jac = _kkt_system(ws, si, sj, gam, a, bb, P, Q)
        best = np.abs(F).max(initial=0.0)
        stall_ref = np.inf
        for _inner in range(150):
            if best <= tol_kkt:
                break
            if _inner % 10 == 0:
                # rank-deficient supports converge linearly, which is fine,
                # but a genuine stall means the support is inconsistent
                if best > 0.97 * stall_ref:
                    break
                stall_ref = best
            N = (jac.T @ jac).toarray()
            g = jac.T @ F
            improved = False
            for _try in range(10):
                try:
                    step = np.linalg.solve(N + lam * np.eye(ns + nv), -g)
                except np.linalg.LinAlgError:
                    lam = max(lam * 10, 1e-10)
                    continue
                gam2 = gam + step[:ns]
                a2 = a + step[ns:ns + m]
                b2 = bb + step[ns + m:ns + m + n]
                P2 = P + step[ns + m + n:ns + m + n + m * d].reshape(m, d)
                Q2 = Q + step[ns + m + n + m * d:].reshape(n, d)
                F2, jac2 = _kkt_system(ws, si, sj, gam2, a2, b2, P2, Q2)
                new_max = np.abs(F2).max(initial=0.0)
                if new_max <= best or new_max <= tol_kkt:
                    gam, a, bb, P, Q = gam2, a2, b2, P2, Q2
                    F, jac, best = F2, jac2, new_max
                    lam = max(lam / 4, 1e-14)
                    improved = True
                    break
                lam *= 10
            if not improved:
                break
        if verbose:
            print(f"    gn outer {_outer}: support {ns} kkt {best:.2e}",
                  flush=True)
        if best > move_tol:
            return None

        # active-set moves, thresholds scaled to the achieved accuracy
        noise = max(1e-11, 10 * best)
        neg = gam < -noise
        if neg.any():
            keep = ~neg
            if not keep.any():
                return None
            si, sj, gam = si[keep], sj[keep], gam[keep]
            continue
        D = ws.dual_feas_matrix(a, bb, P, Q)
        D_off = D.copy()
        D_off[si, sj] = -np.inf
        worst = D_off.max(initial=-np.inf)
        if worst > max(1e-11 * scale, 10 * best):
            ci, cj = np.nonzero(D_off >= max(0.5 * worst, 1e-12))
            if len(si) + len(ci) > cap:
                return None
            si = np.concatenate([si, ci])
            sj = np.concatenate([sj, cj])
            gam = np.concatenate([gam, np.zeros(len(ci))])
            continue
        if best > accept_tol:
            # no mass or feasibility repair applies, so the stall points at
            # inconsistent support rows: evict the worst-residual cells
            e5 = np.abs(F[nv:])
            bad = e5 >= max(0.5 * e5.max(initial=0.0), 10 * accept_tol)
            if not bad.any() or bad.all():
                return None
            keep = ~bad
            si, sj, gam = si[keep], sj[keep], gam[keep]
            continue
        z = 0.5 * (ws.X[si] + ws.Y[sj]) + 0.5 * (P[si] + Q[sj])
        pos = gam > 0
        return {
            "sup_i": si[pos], "sup_j": sj[pos], "gamma": gam[pos],
            "z": z[pos], "duals": (a, bb, P, Q),
            "primal_res": float(np.abs(F[:nv]).max(initial=0.0)),
            "dual_res": max(0.0, float(D.max())),
        }
    return None


def _lp_columns(ws, ci, cj, cz):
    """Sparse constraint columns and costs for cells at fixed carrier points."""
    import scipy.sparse as sp

    m, n, d = ws.m_at, ws.n_at, ws.d
    nc = len(ci)
    ar = np.arange(nc)
    zx = cz - ws.X[ci]
    zy = cz - ws.Y[cj]
    rows = [ci, m + cj]
    vals = [np.ones(nc), np.ones(nc)]
    for e in range(d):
        rows.append(ws.oP + ci * d + e)
        vals.append(zx[:, e])
        rows.append(ws.oQ + cj * d + e)
        vals.append(zy[:, e])
    cols = np.tile(ar, 2 + 2 * d)
    a = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), cols)),
        shape=(ws.rows, nc)).tocsc()
    mid = 0.5 * (ws.X[ci] + ws.Y[cj])
    costs = ws.K[ci, cj] + ((cz - mid) ** 2).sum(-1)
    return a, costs


def _merge_cells(ws, ci, cj, x, cz):
    """Collapse duplicate cells to one mass-weighted carrier each."""
    n, d = ws.n_at, ws.d
    pos = x > 0
    flat = ci[pos] * n + cj[pos]
    gam_c, z_c = x[pos], cz[pos]
    uniq, inv = np.unique(flat, return_inverse=True)
    gm = np.zeros(len(uniq))
    np.add.at(gm, inv, gam_c)
    mz = np.zeros((len(uniq), d))
    np.add.at(mz, inv, gam_c[:, None] * z_c)
    si = (uniq // n).astype(int)
    sj = (uniq % n).astype(int)
    return si, sj, gm, mz / gm[:, None]


def _center_polish(ws, duals, opts):
    """Interior centering pass on the cell-margin dual, then Gauss-Newton.

    The dual of the support problem maximizes mu'a + nu'b over jets whose
    per-cell margins D_ij are all nonpositive. The raw iterate's duals sit
    near a face of that system but identify the active cells poorly; a
    log-barrier Newton iteration follows the central path instead, and its
    multipliers t / (-D_ij) separate active cells from slack ones even on
    badly degenerate faces. The handoff to the Gauss-Newton refiner then
    goes in three steps, each feeding the next a consistent start:

      1. dual fit: least-squares D = 0 over the likely-active pool pulls
         the jets onto the optimal face, which fixes the cell carriers
         z = (x + y) / 2 + (P + Q) / 2 to their converged positions;
      2. mass fit: the marginal and barycenter equations are linear in the
         cell masses at frozen carriers, so a nonnegative least-squares
         over a wide cell pool recovers a sparse consistent gamma (the
         thresholded multipliers alone misplace the mass of dropped cells,
         which stalls the refiner in a rank-deficient valley);
      3. Gauss-Newton on the fitted support polishes everything jointly.

    Margin of the cell (i, j), with s = y_j - x_i:

        D_ij = b_j - (-a_i) - (P_i + Q_j) . s / 2 + |Q_j + P_i|^2 / 4
               - |s|^2 / 4

    which is the ordered pair margin of the jets (-a_i, -P_i) at x_i and
    (b_j, Q_j) at y_j. An atom shared by the two sides admits no strict
    interior (its own cell forces equal jets), so coincident atoms share
    one jet variable and their cell, whose margin is then identically
    zero, is kept in the support unconditionally.
    """
    import scipy.sparse as sp
    from scipy.optimize import nnls
    from scipy.sparse.linalg import lsmr

    m, n, d = ws.m_at, ws.n_at, ws.d
    if m * n > 400_000:
        return None
    scale = 1.0 + ws.K.max(initial=0.0)
    cap = max(opts.polish_cap, 2 * ws.rows)
    pts, grp = np.unique(np.vstack([ws.X, ws.Y]), axis=0,
                         return_inverse=True)
    grp = grp.ravel()
    gx, gy = grp[:m], grp[m:]
    ng = len(pts)
    mu_g = np.zeros(ng, dtype=bool)
    nu_g = np.zeros(ng, dtype=bool)
    mu_g[gx] = True
    nu_g[gy] = True
    iu, ju = np.nonzero(mu_g[:, None] & nu_g[None, :]
                        & ~np.eye(ng, dtype=bool))
    s = pts[ju] - pts[iu]
    s2 = 0.25 * (s * s).sum(1)
    npair = len(iu)
    nth = ng * (1 + d)
    t_start = time.perf_counter()
    if opts.verbose:
        print(f"  center: groups {ng} pairs {npair}", flush=True)
    cv = np.zeros(ng)
    np.add.at(cv, gx, -ws.mu)
    np.add.at(cv, gy, ws.nu)
    cobj = np.concatenate([cv, np.zeros(ng * d)])

    def alpha_of(th):
        v = th[:ng]
        g = th[ng:].reshape(ng, d)
        gd = g[ju] - g[iu]
        al = (v[ju] - v[iu] - 0.5 * ((g[ju] + g[iu]) * s).sum(1)
              + 0.25 * (gd * gd).sum(1) - s2)
        return al, gd

    a0, b0, P0, Q0 = duals
    cnt = np.zeros(ng)
    np.add.at(cnt, grp, 1.0)
    v0 = np.zeros(ng)
    np.add.at(v0, gx, -a0)
    np.add.at(v0, gy, b0)
    g0 = np.zeros((ng, d))
    np.add.at(g0, gx, -P0)
    np.add.at(g0, gy, Q0)
    th = np.concatenate([v0 / cnt, (g0 / cnt[:, None]).ravel()])
    # pull toward the zero jet (strictly feasible) until feasible
    for tau in (1.0, 0.7, 0.4, 0.2, 0.1, 0.0):
        al, gd = alpha_of(tau * th)
        if al.max() < -1e-10 * scale:
            th = tau * th
            break
    else:
        return None

    ar = np.arange(d)
    cols_g = np.concatenate([ng + iu[:, None] * d + ar,
                             ng + ju[:, None] * d + ar], axis=1)
    cols = np.concatenate([np.column_stack([iu, ju]), cols_g],
                          axis=1).ravel()
    rows_j = np.repeat(np.arange(npair), 2 + 2 * d)
    ones = np.ones((npair, 1))
    # the quadratic part |g_q - g_p|^2 / 4 needs one row per component
    rb = np.arange(npair * d)
    bmat = sp.csr_matrix(
        (np.concatenate([-np.ones(npair * d), np.ones(npair * d)]),
         (np.concatenate([rb, rb]),
          np.concatenate([(ng + iu[:, None] * d + ar).ravel(),
                          (ng + ju[:, None] * d + ar).ravel()]))),
        shape=(npair * d, nth))

    t_end = 1e-13 * scale
    for t in np.geomspace(1e-1, 1e-13, 13) * scale:
        for _newt in range(60):
            al, gd = alpha_of(th)
            lam = t / (-al)
            dat = np.concatenate(
                [-ones, ones, -0.5 * s - 0.5 * gd, -0.5 * s + 0.5 * gd],
                axis=1).ravel()
            jac = sp.csr_matrix((dat, (rows_j, cols)), shape=(npair, nth))
            grad = cobj - jac.T @ lam
            hess = ((jac.multiply((lam * lam / t)[:, None])).T @ jac
                    + 0.5 * (bmat.multiply(
                        np.repeat(lam, d)[:, None])).T @ bmat).toarray()
            # Jacobi scaling keeps the factorization alive at small t,
            # where the multiplier spread makes the raw system singular
            dg = np.sqrt(np.maximum(hess.diagonal(), 1e-30))
            hess /= dg[:, None]
            hess /= dg[None, :]
            hess[np.diag_indices_from(hess)] += 1e-13
            try:
                step = cho_solve(cho_factor(hess, lower=True), grad / dg)
            except np.linalg.LinAlgError:
                break
            step /= dg
            dec = float(grad @ step)
            if dec <= 0.1 * t:
                break
            f0 = cobj @ th + t * np.log(-al).sum()
            beta = 1.0
            while beta > 1e-13:
                thn = th + beta * step
                aln, _ = alpha_of(thn)
                if aln.max() < 0:
                    fn = cobj @ thn + t * np.log(-aln).sum()
                    if fn >= f0 + 1e-4 * beta * dec:
                        break
                beta *= 0.5
            else:
                break
            th = thn
        t_end = t

    al, _ = alpha_of(th)
    if opts.verbose:
        print(f"  center: barrier {time.perf_counter() - t_start:.1f}s "
              f"alpha_max {al.max():.2e}", flush=True)
    lam_g = np.zeros((ng, ng))
    lam_g[iu, ju] = t_end / (-al)
    lam_mat = lam_g[gx][:, gy]
    shared = gx[:, None] == gy[None, :]
    v = th[:ng]
    g = th[ng:].reshape(ng, d)
    a1 = -v[gx]
    b1 = v[gy]
    P1 = -g[gx]
    Q1 = g[gy]
    # strict complementarity: active cells keep multipliers on the order of
    # their row and column masses, slack cells decay with t. Row-relative
    # thresholds keep the cells of light atoms
    rmax = lam_mat.max(axis=1, initial=0.0)
    cmax = lam_mat.max(axis=0, initial=0.0)
    floor = np.maximum(np.minimum(rmax[:, None], cmax[None, :]), 1e-300)

    # step 1: dual fit on the likely-active pool
    ti, tj = np.nonzero((lam_mat >= 3e-2 * floor) | shared)
    for _fit in range(8):
        w_s = ws.W[ti, tj]
        Dv = (a1[ti] + b1[tj] + ((P1[ti] - Q1[tj]) * w_s).sum(-1)
              + 0.25 * ((P1[ti] + Q1[tj]) ** 2).sum(-1) - ws.K[ti, tj])
        if np.abs(Dv).max(initial=0.0) < 1e-13 * scale:
            break
        zt = 0.5 * (ws.X[ti] + ws.Y[tj]) + 0.5 * (P1[ti] + Q1[tj])
        zx = zt - ws.X[ti]
        zy = zt - ws.Y[tj]
        rr = np.arange(len(ti))
        rows_l = [rr, rr]
        cols_l = [ti, m + tj]
        vals_l = [np.ones(len(ti)), np.ones(len(ti))]
        for e in range(d):
            rows_l += [rr, rr]
            cols_l += [m + n + ti * d + e, m + n + m * d + tj * d + e]
            vals_l += [zx[:, e], zy[:, e]]
        jd = sp.csr_matrix(
            (np.concatenate(vals_l),
             (np.concatenate(rows_l), np.concatenate(cols_l))),
            shape=(len(ti), ws.rows))
        sol = lsmr(jd, -Dv, damp=1e-10, atol=1e-14, btol=1e-14)[0]
        a1 = a1 + sol[:m]
        b1 = b1 + sol[m:m + n]
        P1 = P1 + sol[m + n:m + n + m * d].reshape(m, d)
        Q1 = Q1 + sol[m + n + m * d:].reshape(n, d)
    if opts.verbose:
        dmax = float(np.abs(Dv).max(initial=0.0)) if len(ti) else 0.0
        print(f"  center: dualfit pool {len(ti)} D_max {dmax:.2e} "
              f"({time.perf_counter() - t_start:.1f}s)", flush=True)

    # step 2: nonnegative mass fit over a wide pool at frozen carriers
    si, sj = np.nonzero((lam_mat >= 1e-3 * floor) | shared)
    pool_cap = 6 * ws.rows
    if len(si) > pool_cap:
        # core cells by multiplier, the rest sampled for spread
        lamv = lam_mat[si, sj]
        pick = np.zeros(len(si), dtype=bool)
        pick[np.argsort(lamv)[-ws.rows:]] = True
        pick[shared[si, sj]] = True
        rest = np.nonzero(~pick)[0]
        rng = np.random.default_rng(0)
        pick[rng.choice(rest, size=pool_cap - pick.sum(), replace=False)] = True
        si, sj = si[pick], sj[pick]
    gam0 = None
    if len(si) * ws.rows <= 40_000_000:
        zb = 0.5 * (ws.X[si] + ws.Y[sj]) + 0.5 * (P1[si] + Q1[sj])
        amat = np.zeros((ws.rows, len(si)))
        js = np.arange(len(si))
        amat[si, js] = 1.0
        amat[m + sj, js] = 1.0
        zx = zb - ws.X[si]
        zy = zb - ws.Y[sj]
        for e in range(d):
            amat[m + n + si * d + e, js] = zx[:, e]
            amat[m + n + m * d + sj * d + e, js] = zy[:, e]
        rhs = np.concatenate([ws.mu, ws.nu, np.zeros((m + n) * d)])
        try:
            gam_f, rnorm = nnls(amat, rhs, maxiter=30 * len(si))
        except RuntimeError:
            gam_f, rnorm = None, np.inf
        if gam_f is not None and rnorm <= 1e-6:
            keep = (gam_f > 0) | shared[si, sj]
            if 0 < keep.sum() <= cap:
                si, sj = si[keep], sj[keep]
                gam0 = np.maximum(gam_f[keep], 1e-12)
        if opts.verbose:
            print(f"  center: nnls pool {len(js)} rnorm {rnorm:.2e} "
                  f"keep {0 if gam0 is None else len(gam0)} "
                  f"({time.perf_counter() - t_start:.1f}s)", flush=True)

    # step 3: Gauss-Newton, falling back to thresholded multipliers
    if gam0 is not None:
        pol = _support_gn(ws, si, sj, gam0, (a1, b1, P1, Q1), cap,
                          verbose=opts.verbose)
        if pol is not None:
            if opts.verbose:
                print(f"  center: refined "
                      f"({time.perf_counter() - t_start:.1f}s)", flush=True)
            return pol
    factor = 3e-2
    for _try in range(3):
        sup = (lam_mat >= factor * floor) | shared
        if sup.sum() > cap:
            factor *= 4.0
            continue
        si, sj = np.nonzero(sup)
        if len(si):
            gam0 = np.maximum(lam_mat[si, sj], 1e-12)
            pol = _support_gn(ws, si, sj, gam0, (a1, b1, P1, Q1), cap,
                              verbose=opts.verbose)
            if pol is not None:
                return pol
        factor *= 4.0
    if opts.verbose:
        print(f"  center: gave up ({time.perf_counter() - t_start:.1f}s)",
              flush=True)
    return None


def _lp_polish(ws, G, duals, opts):
    """Column-generation LP refinement of the support problem.

    Fallback for dual-degenerate instances where the Gauss-Newton polish
    cannot settle on a consistent support. Each LP column is a cell with a
    fixed carrier point; pricing is closed-form (the best carrier for a cell
    is the midpoint shifted by (P_i + Q_j)/2, with margin D_ij), so violated
    cells gain columns and the LP is re-solved. Pricing runs to a coarse
    tolerance only to identify the support; the Gauss-Newton refiner then
    solves the support KKT system to full precision. If it will not
    converge, pricing continues and the LP answer itself is returned.
    """
    from scipy.optimize import linprog

    m, n, d = ws.m_at, ws.n_at, ws.d
    if m * n > 400_000:
        return None
    scale = 1.0 + ws.K.max(initial=0.0)
    cap = max(opts.polish_cap, 2 * ws.rows)
    keep_cap = max(2000, 3 * ws.rows)
    a0, b0, P0, Q0 = duals
    D = ws.dual_feas_matrix(a0, b0, P0, Q0)
    gmax = G.max(initial=0.0)
    pool = (G > max(1e-8 * gmax, 1e-14)) | (D > -1e-2 * scale)
    pi_, pj_ = np.nonzero(pool)
    if len(pi_) > keep_cap:
        order = np.argsort(G[pi_, pj_])[-keep_cap:]
        pi_, pj_ = pi_[order], pj_[order]
    # seed with the closed-form carriers of the near-active cells plus the
    # product family z = x_i + y_j - beta, which is feasible for any centred
    # pair no matter how far the dual estimate is off
    all_i, all_j = np.divmod(np.arange(m * n), n)
    beta = 0.5 * (ws.mu @ ws.X + ws.nu @ ws.Y)
    ci = np.concatenate([pi_, all_i])
    cj = np.concatenate([pj_, all_j])
    cz = np.concatenate([
        0.5 * (ws.X[pi_] + ws.Y[pj_]) + 0.5 * (P0[pi_] + Q0[pj_]),
        ws.X[all_i] + ws.Y[all_j] - beta,
    ])
    gn_tol = 1e-6 * scale
    price_tol = 1e-9 * scale
    fresh_cap = max(4000, 6 * ws.rows)
    lp_opts = {"presolve": True,
               "primal_feasibility_tolerance": 1e-9,
               "dual_feasibility_tolerance": 1e-9}
    res = None
    an = bn = Pn = Qn = None
    a_mat = costs = None
    gn_tries = 4
    for _round in range(60):
        a_mat, costs = _lp_columns(ws, ci, cj, cz)
        res = linprog(c=costs, A_eq=a_mat, b_eq=ws.b, bounds=(0, None),
                      method="highs", options=lp_opts)
        y = None
        if res.status == 0 and res.eqlin is not None:
            y = np.asarray(res.eqlin.marginals, dtype=float)
        if y is None or y.ndim != 1 or len(y) != ws.rows:
            # presolve occasionally drops the dual solution; retry without
            res = linprog(c=costs, A_eq=a_mat, b_eq=ws.b, bounds=(0, None),
                          method="highs",
                          options={**lp_opts, "presolve": False})
            if res.status != 0 or res.eqlin is None:
                return None
            y = np.asarray(res.eqlin.marginals, dtype=float)
            if y.ndim != 1 or len(y) != ws.rows:
                return None
        an, bn, Pn, Qn = ws.dual_split(y)
        Dn = ws.dual_feas_matrix(an, bn, Pn, Qn)
        worst = float(Dn.max())
        if worst <= price_tol:
            break
        if worst <= gn_tol and gn_tries > 0:
            # support located well enough for the high-precision refiner,
            # whose own active-set moves absorb small support errors
            gn_tries -= 1
            si, sj, gm, _ = _merge_cells(ws, ci, cj, np.asarray(res.x), cz)
            if 0 < len(si) <= cap:
                pol = _support_gn(ws, si, sj, gm, (an, bn, Pn, Qn), cap)
                if pol is not None:
                    return pol
        # cut the most violated cells at their best carriers. Columns are
        # never dropped: near-zero reduced-cost ties are exactly what pins
        # the dual vertex down on a degenerate face, and removing them makes
        # the duals (and the solver) erratic even though the value converges
        fi, fj = np.nonzero(Dn > max(0.1 * worst, price_tol))
        if len(fi) > fresh_cap:
            order = np.argsort(Dn[fi, fj])[-fresh_cap:]
            fi, fj = fi[order], fj[order]
        fz = 0.5 * (ws.X[fi] + ws.Y[fj]) + 0.5 * (Pn[fi] + Qn[fj])
        ci = np.concatenate([ci, fi])
        cj = np.concatenate([cj, fj])
        cz = np.concatenate([cz, fz])
    else:
        return None

    x = np.asarray(res.x)
    if not (x > 0).any():
        return None
    # complementarity: kept columns must price at zero
    red = costs - (a_mat.T @ np.asarray(res.eqlin.marginals))
    if np.abs(red[x > 0]).max(initial=0.0) > 1e-8 * scale:
        return None
    si, sj, gm, z = _merge_cells(ws, ci, cj, x, cz)
    e1 = -ws.mu.copy()
    e2 = -ws.nu.copy()
    np.add.at(e1, si, gm)
    np.add.at(e2, sj, gm)
    e3 = np.zeros((m, d))
    e4 = np.zeros((n, d))
    np.add.at(e3, si, gm[:, None] * (z - ws.X[si]))
    np.add.at(e4, sj, gm[:, None] * (z - ws.Y[sj]))
    primal_res = max(np.abs(e1).max(initial=0.0), np.abs(e2).max(initial=0.0),
                     np.abs(e3).max(initial=0.0), np.abs(e4).max(initial=0.0))
    if primal_res > 1e-8 * (1.0 + np.abs(ws.b).max(initial=0.0)):
        return None
    return {
        "sup_i": si, "sup_j": sj, "gamma": gm, "z": z,
        "duals": (an, bn, Pn, Qn),
        "primal_res": float(primal_res),
        "dual_res": max(0.0, float(ws.dual_feas_matrix(an, bn, Pn, Qn).max())),
    }


def solve_perspective(prog: PerspectiveProgram, opts: SolverOptions | None = None) -> ConicSolution:
    """Solve the perspective program; see the module docstring for the method."""
    if opts is None:
        opts = SolverOptions()
    gap_tol = opts.tol if opts.gap_tol is None else opts.gap_tol
    m, n, d = len(prog.mu), len(prog.nu), prog.dim

    if abs(prog.mu.sum() - prog.nu.sum()) > 1e-9 * (1 + prog.mu.sum()):
        return _infeasible_solution(prog, "marginal masses differ")
    ws = _Workspace(prog, opts.tol)
    if ws.infeasible_rows:
        sol = _infeasible_solution(prog, "inconsistent constraint rows")
        sol.kkt["farkas"] = ws.infeasible_rows[0][2]
        return sol

    rho = opts.rho
    alpha = opts.over_relax
    G = np.outer(ws.mu, ws.nu)
    S = np.zeros((m, n, d))
    T = np.zeros((m, n))
    vG, vS, vT = G.copy(), S.copy(), T.copy()
    lG = np.zeros_like(G)
    lS = np.zeros_like(S)
    lT = np.zeros_like(T)
    cG, cT = ws.K, 2.0

    polish_trigger = 1e-3
    lp_attempts = 4
    lp_next_it = 2000
    best_polish = None
    log = []
    status = "MaxIters"
    it = 0
    v_prev_norm = None
    while it < opts.max_iters:
        it += 1
        uG, uS, uT = _project_cone(vG - (lG + cG) / rho, vS - lS / rho,
                                   vT - (lT + cT) / rho)
        hG = alpha * uG + (1 - alpha) * vG
        hS = alpha * uS + (1 - alpha) * vS
        hT = alpha * uT + (1 - alpha) * vT
        vG_old, vS_old, vT_old = vG, vS, vT
        vG, vS, w = ws.project_affine(hG + lG / rho, hS + lS / rho)
        vT = hT + lT / rho
        lG = lG + rho * (hG - vG)
        lS = lS + rho * (hS - vS)
        lT = lT + rho * (hT - vT)

        if it % 50 == 0:
            r_norm = np.sqrt(((uG - vG) ** 2).sum() + ((uS - vS) ** 2).sum()
                             + ((uT - vT) ** 2).sum())
            s_norm = rho * np.sqrt(((vG - vG_old) ** 2).sum()
                                   + ((vS - vS_old) ** 2).sum()
                                   + ((vT - vT_old) ** 2).sum())
            if it <= 20000:
                if r_norm > 10 * s_norm and rho < 1e6:
                    rho *= 2.0
                elif s_norm > 10 * r_norm and rho > 1e-6:
                    rho /= 2.0

        if it % opts.check_every == 0 or it == opts.max_iters:
            y = -rho * w
            a, bb, P, Q = ws.dual_split(y)
            D = ws.dual_feas_matrix(a, bb, P, Q)
            dfeas = max(0.0, float(D.max()))
            dval = float(ws.mu @ a + ws.nu @ bb) - dfeas
            pval = float((cG * uG).sum() + cT * uT.sum())
            pres = float(np.abs(ws.a_apply(uG, uS) - ws.b).max())
            gap = abs(pval - dval) / (1 + abs(pval))
            log.append((it, pval, dval, pres, dfeas))
            if opts.verbose and it % (opts.check_every * 40) == 0:
                print(f"  iter {it}: pval {pval:.9f} dval {dval:.9f} "
                      f"pres {pres:.2e} dfeas {dfeas:.2e} rho {rho:.2e}")
            if opts.polish and gap <= polish_trigger:
                pol = _polish(ws, uG, (a, bb, P, Q), opts)
                if pol is not None:
                    best_polish = pol
                    status = "Optimal"
                    break
                polish_trigger = max(gap / 10, 1e-13)
            if opts.polish and lp_attempts > 0 and gap <= 3e-2 \
                    and it >= lp_next_it:
                # centering tolerates a crude dual estimate (the barrier
                # re-centres it); the LP is a last resort on the final attempt
                lp_attempts -= 1
                lp_next_it = 2 * it
                pol = _center_polish(ws, (a, bb, P, Q), opts)
                if pol is None and lp_attempts == 0:
                    pol = _lp_polish(ws, uG, (a, bb, P, Q), opts)
                if pol is not None:
                    best_polish = pol
                    status = "Optimal"
                    break
            if pres <= opts.tol and dfeas <= opts.tol * (1 + ws.K.max()) \
                    and gap <= gap_tol:
                status = "Optimal"
                break

    if best_polish is None and opts.polish and status == "MaxIters" and it > 0:
        y = -rho * w
        a, bb, P, Q = ws.dual_split(y)
        pol = _polish(ws, uG, (a, bb, P, Q), opts)
        if pol is None:
            pol = _center_polish(ws, (a, bb, P, Q), opts)
        if pol is None:
            pol = _lp_polish(ws, uG, (a, bb, P, Q), opts)
        if pol is not None:
            best_polish = pol
            status = "Optimal"

    if best_polish is not None:
        sol = _extract_polished(prog, ws, best_polish, it, log)
    else:
        sol = _extract_iterate(prog, ws, uG, uS, (a, bb, P, Q), it, log, opts)
        sol.status = status
        if status == "Optimal":
            sol.kkt["polished"] = False
    return sol


def _infeasible_solution(prog, reason):
    m, n, d = len(prog.mu), len(prog.nu), prog.dim
    return ConicSolution(
        gamma=np.zeros(m * n), m=np.zeros((m * n, d)),
        duals_a=np.zeros(m), duals_b=np.zeros(n),
        duals_p=np.zeros((m, d)), duals_q=np.zeros((n, d)),
        primal_value=np.inf, dual_value=np.inf,
        status="Infeasible", kkt={"reason": reason},
    )


def _hat_duals(prog, a, bb, P, Q):
    """Raw row duals -> (phi, psi) convention values and gradients."""
    X, Y = prog.x_atoms, prog.y_atoms
    return (0.5 * (X ** 2).sum(1) + a,
            0.5 * (Y ** 2).sum(1) + bb,
            X + P,
            Y + Q)


def _extract_polished(prog, ws, pol, iters, log):
    m, n, d = len(prog.mu), len(prog.nu), prog.dim
    L, M = ws.len_scale, ws.mass
    a, bb, P, Q = pol["duals"]
    a_o, b_o, P_o, Q_o = a * L ** 2, bb * L ** 2, P * L, Q * L
    gam = pol["gamma"] * M
    z = pol["z"] * L
    flat = pol["sup_i"] * n + pol["sup_j"]
    gamma_full = np.zeros(m * n)
    gamma_full[flat] = gam
    m_full = np.zeros((m * n, d))
    m_full[flat] = gam[:, None] * z
    x_sup = prog.x_atoms[pol["sup_i"]]
    y_sup = prog.y_atoms[pol["sup_j"]]
    cost = 0.5 * (((z - x_sup) ** 2).sum(1) + ((z - y_sup) ** 2).sum(1))
    pval = float(gam @ cost)
    dfeas = pol["dual_res"] * L ** 2
    dval = float(prog.mu @ a_o + prog.nu @ b_o) - dfeas * M
    ha, hb, hp, hq = _hat_duals(prog, a_o, b_o, P_o, Q_o)
    gap = abs(pval - dval) / (1 + abs(pval))
    return ConicSolution(
        gamma=gamma_full, m=m_full, duals_a=ha, duals_b=hb, duals_p=hp,
        duals_q=hq, primal_value=pval, dual_value=dval, status="Optimal",
        iterations=iters,
        kkt={"primal_res": pol["primal_res"] * M, "dual_res": dfeas,
             "gap": gap, "polished": True, "support": len(gam), "log": log},
    )


def _extract_iterate(prog, ws, uG, uS, duals, iters, log, opts):
    m, n, d = len(prog.mu), len(prog.nu), prog.dim
    L, M = ws.len_scale, ws.mass
    a, bb, P, Q = duals
    a_o, b_o, P_o, Q_o = a * L ** 2, bb * L ** 2, P * L, Q * L
    G = np.clip(uG, 0.0, None) * M
    gamma_full = G.reshape(-1)
    # m = gamma * z with z = w + s/gamma on carried cells
    Z = 0.5 * (ws.X[:, None, :] + ws.Y[None, :, :]).copy()
    carried = uG > opts.support_threshold * max(uG.max(initial=0.0), 1e-300)
    Z[carried] += uS[carried] / uG[carried][:, None]
    Z *= L
    m_full = (G[:, :, None] * Z).reshape(-1, d)
    x_b = prog.x_atoms[:, None, :]
    y_b = prog.y_atoms[None, :, :]
    cost = 0.5 * (((Z - x_b) ** 2).sum(-1) + ((Z - y_b) ** 2).sum(-1))
    pval = float((G * cost).sum())
    D = ws.dual_feas_matrix(a, bb, P, Q)
    dfeas = max(0.0, float(D.max())) * L ** 2
    dval = float(prog.mu @ a_o + prog.nu @ b_o) - dfeas * M
    pres = float(np.abs(ws.a_apply(uG, uS) - ws.b).max()) * M
    ha, hb, hp, hq = _hat_duals(prog, a_o, b_o, P_o, Q_o)
    gap = abs(pval - dval) / (1 + abs(pval))
    return ConicSolution(
        gamma=gamma_full, m=m_full, duals_a=ha, duals_b=hb, duals_p=hp,
        duals_q=hq, primal_value=pval, dual_value=dval, status="MaxIters",
        iterations=iters,
        kkt={"primal_res": pres, "dual_res": dfeas, "gap": gap,
             "polished": False, "support": int(carried.sum()), "log": log},
    )
