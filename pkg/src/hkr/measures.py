"""Discrete measures on R^d: moments, centering, balance validation.

A measure is a finite weighted point cloud. Weights are stored unnormalized
(loads in the grillage layer are physical force magnitudes); probability
normalization happens only in :func:`validate_pair`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ZeroMass(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


class BarycentreMismatch(ValueError):
    pass


class GuardExceeded(RuntimeError):
    """A size guard (atom count, grid cells) would be exceeded."""


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud. ``points`` is (n, d), ``weights`` is (n,).

    Duplicate points (bitwise-equal coordinates) are merged on construction
    with weights summed. Near-duplicates are kept distinct: silent geometric
    merging would corrupt configurations whose geometry is the data.
    """

    points: np.ndarray
    weights: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("measure needs at least one atom")
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights length mismatch")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ValueError("non-finite atom data")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        pts, w = _merge_duplicates(pts, w)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "dim", pts.shape[1])
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return self.points.shape[0]

    def total_mass(self) -> float:
        return float(self.weights.sum())

    def translated(self, t) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points + np.asarray(t, dtype=float), self.weights)

    def scaled_mass(self, lam: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.points, self.weights * float(lam))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "atoms": [
                {"x": [float(c) for c in p], "w": float(w)}
                for p, w in zip(self.points, self.weights)
            ],
        }

    @staticmethod
    def from_dict(obj: dict) -> "DiscreteMeasure":
        dim = int(obj["dim"])
        atoms = obj["atoms"]
        pts = np.array([a["x"] for a in atoms], dtype=float)
        w = np.array([a["w"] for a in atoms], dtype=float)
        if pts.size and pts.shape[1] != dim:
            raise DimensionMismatch(f"atom length {pts.shape[1]} != dim {dim}")
        return DiscreteMeasure(pts, w)


def _merge_duplicates(pts: np.ndarray, w: np.ndarray):
    # bitwise-exact equality only
    order = np.lexsort(pts.T[::-1])
    pts_s, w_s = pts[order], w[order]
    keep = np.ones(len(w_s), dtype=bool)
    keep[1:] = np.any(pts_s[1:] != pts_s[:-1], axis=1)
    idx = np.cumsum(keep) - 1
    out_w = np.zeros(keep.sum())
    np.add.at(out_w, idx, w_s)
    out_p = pts_s[keep]
    # restore first-occurrence order for stability of atom indexing
    first_pos = np.full(keep.sum(), len(w_s), dtype=int)
    np.minimum.at(first_pos, idx, order)
    back = np.argsort(first_pos, kind="stable")
    return np.ascontiguousarray(out_p[back]), out_w[back]


def barycentre(m: DiscreteMeasure) -> np.ndarray:
    """Mass-weighted mean point."""
    tot = m.total_mass()
    if tot <= 0:
        raise ZeroMass("zero total mass")
    return np.asarray(m.weights @ m.points / tot)


def variance(m: DiscreteMeasure) -> float:
    """Sum of w_i |x_i - barycentre|^2 with the stored (unnormalized) masses.

    For probability measures this is the usual variance; the caller owns
    normalization otherwise.
    """
    b = barycentre(m)
    d = m.points - b
    return float(m.weights @ np.einsum("ij,ij->i", d, d))


def diameter(*ms: DiscreteMeasure) -> float:
    pts = np.vstack([m.points for m in ms])
    if len(pts) == 1:
        return 0.0
    span = pts.max(axis=0) - pts.min(axis=0)
    return float(np.linalg.norm(span))


@dataclass(frozen=True)
class CenteredPair:
    """Validated pair: both probability-normalized, common barycentre at 0.

    ``shift`` and the mass scales let callers map solutions back to the
    original coordinates and magnitudes.
    """

    mu: DiscreteMeasure
    nu: DiscreteMeasure
    shift: np.ndarray
    mass_mu: float
    mass_nu: float

    @property
    def dim(self) -> int:
        return self.mu.dim

    def diameter(self) -> float:
        return diameter(self.mu, self.nu)


def validate_pair(mu: DiscreteMeasure, nu: DiscreteMeasure, tol: float | None = None) -> CenteredPair:
    """Normalize masses to 1 and translate the common barycentre to the origin.

    Raises BarycentreMismatch if the normalized barycentres differ by more
    than ``tol`` (default 1e-9 * (1 + data diameter)). Each measure is then
    recentred on its own barycentre; the two differ by at most ``tol``, and
    the exact recentering makes the marginal/martingale equality system of
    the downstream conic program consistent to machine precision. The
    recorded ``shift`` is the mu barycentre.
    """
    if mu.dim != nu.dim:
        raise DimensionMismatch(f"dim {mu.dim} != {nu.dim}")
    if tol is None:
        tol = 1e-9 * (1.0 + diameter(mu, nu))
    bmu, bnu = barycentre(mu), barycentre(nu)
    gap = float(np.linalg.norm(bmu - bnu))
    if gap > tol:
        raise BarycentreMismatch(
            f"barycentres differ by {gap:.3e} > tol {tol:.3e}: {bmu} vs {bnu}"
        )
    mu_c = DiscreteMeasure(mu.points - bmu, mu.weights / mu.total_mass())
    nu_c = DiscreteMeasure(nu.points - bnu, nu.weights / nu.total_mass())
    return CenteredPair(
        mu=mu_c,
        nu=nu_c,
        shift=np.asarray(bmu, dtype=float),
        mass_mu=mu.total_mass(),
        mass_nu=nu.total_mass(),
    )
