"""Finite-dimensional ordered-space algebra.

Polyhedral cones in inequality form with LP-backed pointedness and duality,
lattice oracles for the standard cone, Riesz decomposition, and witness-based
lower bounds for the normality constant M and the decomposition constant C.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import sobolev_grid
from .sobolev_grid import GridDomain, GridFunction

CONE_TOL = 1e-10   # absolute tolerance for cone membership
LP_TOL = 1e-9      # feasibility tolerance for all linear programs


class DegenerateConeError(ValueError):
    """The inequality system does not describe a pointed solid cone."""


# ---------------------------------------------------------------------------
# Polyhedral cones
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolyhedralCone:
    """Cone {x : ineq @ x >= 0 componentwise} in inequality form.

    Pointedness (trivial lineality space) is certified by linear programming
    at construction; the unchecked ``wedge`` constructor is the escape hatch
    for deliberately degenerate systems.
    """

    dim: int
    ineq: np.ndarray
    checked: bool = True

    def __post_init__(self):
        ineq = np.atleast_2d(np.asarray(self.ineq, dtype=float))
        if ineq.shape[1] != self.dim:
            raise ValueError(
                f"inequality matrix has {ineq.shape[1]} columns for dim {self.dim}"
            )
        ineq.setflags(write=False)
        object.__setattr__(self, "ineq", ineq)
        if self.checked and not self.is_standard() and not _pointed_by_lp(ineq):
            raise DegenerateConeError("inequality system has nontrivial lineality space")

    @classmethod
    def standard(cls, dim: int) -> "PolyhedralCone":
        return cls(dim, np.eye(dim))

    @classmethod
    def wedge(cls, ineq) -> "PolyhedralCone":
        """Unchecked construction; degenerate systems allowed."""
        ineq = np.atleast_2d(np.asarray(ineq, dtype=float))
        return cls(ineq.shape[1], ineq, checked=False)

    def is_standard(self) -> bool:
        return self.ineq.shape == (self.dim, self.dim) and np.array_equal(
            self.ineq, np.eye(self.dim)
        )

    def contains(self, x, tol: float = CONE_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got shape {x.shape}")
        return bool(np.all(self.ineq @ x >= -tol))

    def contains_many(self, X, tol: float = CONE_TOL) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.all(X @ self.ineq.T >= -tol, axis=1)


def _pointed_by_lp(ineq: np.ndarray) -> bool:
    # lineality space = {x : ineq x = 0}; probe each coordinate direction
    m, d = ineq.shape
    if np.linalg.matrix_rank(ineq) < d:
        return False
    for i in range(d):
        c = np.zeros(d)
        c[i] = -1.0
        res = scipy.optimize.linprog(
            c, A_eq=ineq, b_eq=np.zeros(m), bounds=[(-1.0, 1.0)] * d,
            method="highs",
        )
        if res.status != 0 or res.fun < -LP_TOL:
            return False
    return True


def cone_contains(cone: PolyhedralCone, x, tol: float = CONE_TOL) -> bool:
    """Membership x in the cone, within the fixed absolute tolerance."""
    return cone.contains(x, tol=tol)


def _interior_point_value(cone: PolyhedralCone) -> float:
    # max t s.t. ineq x >= t, |x| <= 1; positive iff the cone is solid
    A = cone.ineq
    m, d = A.shape
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-A, np.ones((m, 1))])
    bounds = [(-1.0, 1.0)] * d + [(None, None)]
    res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=np.zeros(m), bounds=bounds,
                                 method="highs")
    if res.status != 0:
        raise DegenerateConeError("interior LP failed")
    return -res.fun


def cone_generators(cone: PolyhedralCone) -> np.ndarray:
    """Extreme rays of a pointed solid cone, one per row.

    Enumerates (dim-1)-subsets of active inequalities; exact for the small
    dense systems the lab works with.
    """
    A = cone.ineq
    m, d = A.shape
    if d == 1:
        signs = np.sign(A[:, 0])
        if np.all(signs > 0):
            return np.array([[1.0]])
        if np.all(signs < 0):
            return np.array([[-1.0]])
        raise DegenerateConeError("one-dimensional system pins the origin")
    rays = []
    for rows in itertools.combinations(range(m), d - 1):
        sub = A[list(rows)]
        if np.linalg.matrix_rank(sub) != d - 1:
            continue
        _, _, vt = np.linalg.svd(sub)
        v = vt[-1]
        if np.all(A @ v >= -LP_TOL):
            rays.append(v)
        elif np.all(A @ (-v) >= -LP_TOL):
            rays.append(-v)
    if not rays:
        raise DegenerateConeError("no extreme rays found")
    rays = np.array(rays)
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)
    _, keep = np.unique(np.round(rays, 10), axis=0, return_index=True)
    return rays[np.sort(keep)]


def dual_cone(cone: PolyhedralCone) -> PolyhedralCone:
    """Cone of functionals nonnegative on the given cone.

    Requires a pointed cone with nonempty interior; the dual is represented
    by the inequality system whose rows are the primal extreme rays.
    """
    if np.linalg.matrix_rank(cone.ineq) < cone.dim:
        raise DegenerateConeError(
            "inequality system not full rank; dual wedge is not a cone"
        )
    if _interior_point_value(cone) <= LP_TOL:
        raise DegenerateConeError("cone has empty interior; dual wedge is not a cone")
    return PolyhedralCone(cone.dim, cone_generators(cone))


def in_generated_cone(generators: np.ndarray, x, tol: float = LP_TOL) -> bool:
    """Membership in the cone of nonnegative combinations of the generators."""
    G = np.atleast_2d(np.asarray(generators, dtype=float))
    x = np.asarray(x, dtype=float)
    scale = 1.0 + float(np.linalg.norm(x))
    _, resid = scipy.optimize.nnls(G.T, x)
    return resid <= tol * scale


# ---------------------------------------------------------------------------
# Norm specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormSpec:
    """Evaluable norm: weighted lp, discrete Sobolev, or its dual.

    The Sobolev kinds carry the grid they live on.  Weighted lp admits
    p = 1 as well (the decomposition examples need it); the Sobolev kinds
    require p strictly between 1 and infinity.
    """

    kind: str                                # "lp" | "sobolev" | "dual_sobolev"
    p: float
    k: int = 0
    weights: np.ndarray | None = None
    domain: GridDomain | None = None

    def __post_init__(self):
        if self.kind == "lp":
            if self.weights is None:
                raise ValueError("lp norm needs weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w <= 0):
                raise ValueError("weights must be strictly positive")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)
            if not (1.0 <= self.p < np.inf):
                raise ValueError("lp norm needs p in [1, infinity)")
        elif self.kind in ("sobolev", "dual_sobolev"):
            if self.domain is None:
                raise ValueError(f"{self.kind} norm needs a grid domain")
            if not (1.0 < self.p < np.inf):
                raise ValueError("Sobolev norms need p strictly between 1 and infinity")
            if self.kind == "dual_sobolev" and self.k < 1:
                raise ValueError("dual Sobolev norm needs k >= 1")
        else:
            raise ValueError(f"unknown norm kind {self.kind!r}")
        self._sampled_norm_checks()

    @classmethod
    def lp(cls, weights, p: float = 2.0) -> "NormSpec":
        return cls("lp", float(p), weights=np.asarray(weights, dtype=float))

    @classmethod
    def sobolev(cls, domain: GridDomain, k: int, p: float = 2.0) -> "NormSpec":
        return cls("sobolev", float(p), k=k, domain=domain)

    @classmethod
    def dual_sobolev(cls, domain: GridDomain, k: int, p: float = 2.0) -> "NormSpec":
        return cls("dual_sobolev", float(p), k=k, domain=domain)

    @property
    def dim(self) -> int:
        if self.kind == "lp":
            return len(self.weights)
        return self.domain.node_count

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}")
        if self.kind == "lp":
            return float(np.sum(self.weights * np.abs(x) ** self.p) ** (1.0 / self.p))
        gf = GridFunction(self.domain, x)
        if self.kind == "sobolev":
            return sobolev_grid.sobolev_norm(gf, self.k, self.p)
        return sobolev_grid.negative_sobolev_norm(gf, self.k, self.p)

    def value_many(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "lp":
            return np.sum(self.weights * np.abs(X) ** self.p, axis=1) ** (1.0 / self.p)
        if self.kind == "sobolev":
            w = self.domain.cell_measure
            total = np.zeros(X.shape[0])
            for alpha in sobolev_grid.multi_indices(self.k, self.domain.d):
                D = sobolev_grid.diff_operator(self.domain, alpha)
                U = (D @ X.T).T
                total += w * np.sum(np.abs(U) ** self.p, axis=1)
            return total ** (1.0 / self.p)
        if self.p == 2.0:
            w = self.domain.cell_measure
            lu = sobolev_grid._sobolev_stiffness_factor(self.domain, self.k)
            U = lu.solve(X.T)
            return np.sqrt(np.maximum(w * np.sum(U.T * X, axis=1), 0.0))
        return np.array([self.value(x) for x in X])

    def grad(self, x) -> np.ndarray:
        """Gradient of the norm (a subgradient at kinks); zero at the origin."""
        x = np.asarray(x, dtype=float)
        val = self.value(x)
        if val == 0.0:
            return np.zeros_like(x)
        if self.kind == "lp":
            if self.p == 1.0:
                return self.weights * np.sign(x)
            g = self.weights * np.abs(x) ** (self.p - 1.0) * np.sign(x)
            return g * val ** (1.0 - self.p)
        if self.kind == "sobolev":
            w = self.domain.cell_measure
            g = np.zeros_like(x)
            for alpha in sobolev_grid.multi_indices(self.k, self.domain.d):
                D = sobolev_grid.diff_operator(self.domain, alpha)
                u = D @ x
                g += w * (D.T @ (np.abs(u) ** (self.p - 1.0) * np.sign(u)))
            return g * val ** (1.0 - self.p)
        if self.p == 2.0:
            w = self.domain.cell_measure
            lu = sobolev_grid._sobolev_stiffness_factor(self.domain, self.k)
            return w * lu.solve(x) / val
        raise NotImplementedError("gradient of the dual Sobolev norm needs p = 2")

    def _sampled_norm_checks(self, samples: int = 6):
        rng = np.random.default_rng(20240)
        scale_tol = 1e-8
        for _ in range(samples):
            x = rng.standard_normal(self.dim)
            y = rng.standard_normal(self.dim)
            nx, ny = self.value(x), self.value(y)
            if abs(self.value(2.0 * x) - 2.0 * nx) > scale_tol * (1.0 + nx):
                raise ValueError("norm failed the sampled homogeneity check")
            if self.value(x + y) > nx + ny + scale_tol * (1.0 + nx + ny):
                raise ValueError("norm failed the sampled triangle inequality")


@dataclass(frozen=True)
class OrderedSpaceSpec:
    """A finite dimension, a polyhedral cone, and an evaluable norm."""

    dim: int
    cone: PolyhedralCone
    norm: NormSpec

    def __post_init__(self):
        if self.cone.dim != self.dim:
            raise ValueError("cone dimension mismatch")
        if self.norm.dim != self.dim:
            raise ValueError("norm dimension mismatch")

    @classmethod
    def standard_lp(cls, weights, p: float = 2.0) -> "OrderedSpaceSpec":
        w = np.asarray(weights, dtype=float)
        return cls(len(w), PolyhedralCone.standard(len(w)), NormSpec.lp(w, p))

    @classmethod
    def standard_sobolev(cls, domain: GridDomain, k: int, p: float = 2.0) -> "OrderedSpaceSpec":
        dim = domain.node_count
        return cls(dim, PolyhedralCone.standard(dim), NormSpec.sobolev(domain, k, p))

    def norm_value(self, x) -> float:
        return self.norm.value(x)


# ---------------------------------------------------------------------------
# Lattice oracles
# ---------------------------------------------------------------------------

def supremum_oracle(space: OrderedSpaceSpec, x, y, *, directions: int = 64,
                    seed: int = 0, agree_tol: float = 1e-8):
    """Supremum of x and y, or None when minimal upper bounds disagree.

    Componentwise max for the standard cone.  For a general polyhedral cone,
    minimizes random dual-cone objectives over the set of common upper
    bounds; a unique answer across all directions is returned, disagreement
    beyond ``agree_tol`` yields None.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (space.dim,) or y.shape != (space.dim,):
        raise ValueError("vectors must match the space dimension")
    if space.cone.is_standard():
        return np.maximum(x, y)
    A = space.cone.ineq
    m = A.shape[0]
    rng = np.random.default_rng(seed)
    A_ub = np.vstack([-A, -A])
    b_ub = np.concatenate([-(A @ x), -(A @ y)])
    minimizers = []
    for _ in range(directions):
        lam = rng.uniform(0.1, 1.0, size=m)
        c = A.T @ lam
        res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=b_ub,
                                     bounds=[(None, None)] * space.dim,
                                     method="highs")
        if res.status != 0:
            raise RuntimeError(f"upper-bound LP failed with status {res.status}")
        minimizers.append(res.x)
    minimizers = np.array(minimizers)
    spread = np.max(minimizers.max(axis=0) - minimizers.min(axis=0))
    if spread > agree_tol:
        return None
    s = minimizers.mean(axis=0)
    if not (space.cone.contains(s - x, tol=1e-7) and space.cone.contains(s - y, tol=1e-7)):
        return None
    return s


def riesz_decompose(x, y, w):
    """Split w = w1 + w2 with 0 <= w1 <= x and 0 <= w2 <= y.

    Standard-cone order; uses the componentwise minimum, which realizes
    [0, x+y] = [0, x] + [0, y] exactly.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    tol = 1e-12
    if np.any(x < -tol) or np.any(y < -tol):
        raise ValueError("x and y must be nonnegative")
    if np.any(w < -tol) or np.any(w > x + y + tol):
        raise ValueError("w must satisfy 0 <= w <= x + y")
    w1 = np.minimum(w, x)
    return w1, w - w1


# ---------------------------------------------------------------------------
# Constants of the order structure
# ---------------------------------------------------------------------------

def normality_constant_lower_bound(space: OrderedSpaceSpec, witnesses) -> float:
    """max ||x|| / ||y|| over witness pairs with 0 <= x <= y.

    A certified lower bound for the normality constant M.
    """
    witnesses = list(witnesses)
    if not witnesses:
        raise ValueError("need at least one witness pair")
    best = 0.0
    for x, y in witnesses:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if not space.cone.contains(x):
            raise ValueError("witness x is not in the cone")
        if not space.cone.contains(y - x):
            raise ValueError("witness pair violates x <= y")
        ny = space.norm.value(y)
        if ny <= 0.0:
            raise ValueError("witness y must be nonzero")
        best = max(best, space.norm.value(x) / ny)
    return best


def decomposition_constant_estimate(space: OrderedSpaceSpec, samples) -> float:
    """max (||y|| + ||z||) / ||x|| over the minimizing decompositions x = y - z.

    A lower bound for the decomposition constant C; zero samples are skipped.
    """
    from .span_lattice import span_norm  # deferred: span_lattice builds on this module

    best = None
    for x in samples:
        x = np.asarray(x, dtype=float)
        nx = space.norm.value(x)
        if nx == 0.0:
            continue
        best = max(best or 0.0, span_norm(space, x).value / nx)
    if best is None:
        raise ValueError("all samples were zero")
    return best


# ---------------------------------------------------------------------------
# Faces and lattice homomorphisms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FaceReport:
    is_face: bool
    witness: tuple[np.ndarray, np.ndarray] | None
    samples_checked: int


def is_face(image_generators, ambient: PolyhedralCone, *, sample_size: int = 512,
            seed: int = 0, tol: float = LP_TOL) -> FaceReport:
    """Sampled face test: search for 0 <= z <= g with g generated, z outside.

    Sound on the sampled set; the search picks order-interval extreme points
    by LP (componentwise for the standard ambient cone) and tests membership
    in the generated cone by nonnegative least squares.
    """
    G = np.atleast_2d(np.asarray(image_generators, dtype=float))
    if G.shape[1] != ambient.dim:
        raise ValueError("generator dimension mismatch")
    for g in G:
        if not ambient.contains(g, tol=1e-8):
            raise ValueError("generator outside the ambient cone")
    rng = np.random.default_rng(seed)
    checked = 0

    def candidates_for(y):
        nonlocal checked
        if ambient.is_standard():
            # box [0, y]: deterministic single-coordinate corners first
            for i in range(ambient.dim):
                z = np.zeros(ambient.dim)
                z[i] = y[i]
                yield z
            while True:
                mask = rng.integers(0, 2, size=ambient.dim).astype(float)
                yield mask * y
        else:
            A = ambient.ineq
            A_ub = np.vstack([-A, A])
            b_ub = np.concatenate([np.zeros(A.shape[0]), A @ y])
            while True:
                c = rng.standard_normal(ambient.dim)
                res = scipy.optimize.linprog(c, A_ub=A_ub, b_ub=b_ub,
                                             bounds=[(None, None)] * ambient.dim,
                                             method="highs")
                if res.status == 0:
                    yield res.x

    # sample upper elements: the generators themselves, then random combos
    def upper_elements():
        for g in G:
            yield g
        while True:
            coeffs = rng.uniform(0.0, 1.0, size=G.shape[0])
            yield coeffs @ G

    per_y = max(4, sample_size // max(2 * len(G), 8))
    for y in upper_elements():
        if checked >= sample_size:
            break
        for z in itertools.islice(candidates_for(y), per_y):
            checked += 1
            if np.linalg.norm(z) <= tol:
                continue
            if not in_generated_cone(G, z, tol=tol):
                return FaceReport(False, (z, np.asarray(y)), checked)
            if checked >= sample_size:
                break
    return FaceReport(True, None, checked)


@dataclass(frozen=True)
class LatticeHomReport:
    max_defect: float
    passed: bool
    worst_sample: np.ndarray | None


def lattice_hom_check(J: np.ndarray, domain: OrderedSpaceSpec, samples,
                      tol: float = 1e-10) -> LatticeHomReport:
    """Report max over samples of || |Jx| - J|x| ||_inf; PASS iff <= tol."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if J.shape[1] != domain.dim:
        raise ValueError("map domain dimension mismatch")
    worst, worst_x = 0.0, None
    for x in samples:
        x = np.asarray(x, dtype=float)
        defect = float(np.max(np.abs(np.abs(J @ x) - J @ np.abs(x))))
        if defect > worst:
            worst, worst_x = defect, x
    return LatticeHomReport(worst, worst <= tol, worst_x)
