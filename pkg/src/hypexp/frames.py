"""Adapted-frame linear algebra for partially hyperbolic splittings.

Vectors and one-step derivatives are expressed in an orthonormal frame
aligned with the invariant bundles (stable, center, unstable), so block
norms, slopes and cone tests are plain Euclidean computations.  Under
the adapted norm convention all rate inequalities hold with constant 1,
which is what `check_domination` verifies on sampled derivatives.
"""

__all__ = [
    "SplittingSpec",
    "FrameVector",
    "FrameMatrix",
    "Cone",
    "DominationError",
    "GraphGain",
    "slope",
    "cone_contains",
    "graph_gain",
    "check_domination",
    "DominationReport",
]

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np


class DominationError(ValueError):
    """Raised when a gain computation is attempted on non-dominated blocks."""


class SplittingSpec:
    """Dimensions and rate bounds of a three-bundle invariant splitting.

    Rates are per unit of hyperbolic time (for suspension-like systems,
    per roof crossing): the stable block norm lies in [lam1, mu1], the
    center block in [lam2, mu2] and the unstable block in [lam3, mu3],
    with ``mu1 < lam2 <= mu2 < lam3`` and ``mu1 < 1 < lam3``.  The norm
    constant is fixed at 1 (adapted norm), kept as an attribute only so
    reports can echo it.
    """

    def __init__(self, dim_s, dim_c, dim_u, rates, c_rate=1.0):
        dims = (int(dim_s), int(dim_c), int(dim_u))
        if min(dims) < 1:
            raise ValueError("all three bundle dimensions must be positive")
        lam1, mu1, lam2, mu2, lam3, mu3 = (float(r) for r in rates)
        if not (lam1 <= mu1 < lam2 <= mu2 < lam3 <= mu3):
            raise ValueError(
                "rates must satisfy lam1<=mu1<lam2<=mu2<lam3<=mu3, got %r"
                % (rates,))
        if not (mu1 < 1.0 < lam3):
            raise ValueError("domination requires mu1 < 1 < lam3")
        self.dim_s, self.dim_c, self.dim_u = dims
        self.rates = (lam1, mu1, lam2, mu2, lam3, mu3)
        self.c_rate = float(c_rate)

    @property
    def dim(self):
        return self.dim_s + self.dim_c + self.dim_u

    @property
    def ranges(self):
        """Index ranges (start, stop) of the s, c, u blocks in frame order."""
        a = self.dim_s
        b = a + self.dim_c
        return ((0, a), (a, b), (b, self.dim))

    def __repr__(self):
        return "SplittingSpec(%d,%d,%d, rates=%r)" % (
            self.dim_s, self.dim_c, self.dim_u, self.rates)


class FrameVector:
    """A tangent vector in adapted-frame coordinates.

    The three components live in the stable, center and unstable
    subspaces; since the frame is orthonormal the squared norm is the
    sum of the three squared block norms, exactly.
    """

    __slots__ = ("vs", "vc", "vu")

    def __init__(self, vs, vc, vu):
        self.vs = np.atleast_1d(np.asarray(vs, dtype=float))
        self.vc = np.atleast_1d(np.asarray(vc, dtype=float))
        self.vu = np.atleast_1d(np.asarray(vu, dtype=float))

    @classmethod
    def from_full(cls, v, spec):
        v = np.asarray(v, dtype=float)
        (s0, s1), (c0, c1), (u0, u1) = spec.ranges
        return cls(v[s0:s1], v[c0:c1], v[u0:u1])

    def full(self):
        return np.concatenate([self.vs, self.vc, self.vu])

    def norm(self):
        return float(np.sqrt(self.vs @ self.vs + self.vc @ self.vc
                             + self.vu @ self.vu))

    @property
    def in_cu(self):
        """True when the stable component vanishes identically."""
        return bool(np.all(self.vs == 0.0))

    def __repr__(self):
        return "FrameVector(vs=%s, vc=%s, vu=%s)" % (self.vs, self.vc, self.vu)


class FrameMatrix:
    """A d x d derivative in frame coordinates with recorded block ranges."""

    __slots__ = ("mat", "spec")

    def __init__(self, mat, spec):
        mat = np.asarray(mat, dtype=float)
        if mat.shape != (spec.dim, spec.dim):
            raise ValueError("matrix shape %s does not match splitting dim %d"
                             % (mat.shape, spec.dim))
        if not np.all(np.isfinite(mat)):
            raise ValueError("frame matrix entries must be finite")
        self.mat = mat
        self.spec = spec

    _NAMES = {"s": 0, "c": 1, "u": 2}

    def block(self, row, col):
        """Sub-block by bundle names, e.g. block('u', 'c')."""
        r = self.spec.ranges[self._NAMES[row]]
        c = self.spec.ranges[self._NAMES[col]]
        return self.mat[r[0]:r[1], c[0]:c[1]]

    def apply(self, v: FrameVector) -> FrameVector:
        return FrameVector.from_full(self.mat @ v.full(), self.spec)

    def __matmul__(self, other):
        if isinstance(other, FrameMatrix):
            return FrameMatrix(self.mat @ other.mat, self.spec)
        return NotImplemented


@dataclass(frozen=True)
class Cone:
    """Slope cone inside the center-unstable plane.

    Contains the zero vector and every cu-vector whose unstable over
    center component ratio is at most ``b``.  With b = 0 the cone
    degenerates to the center subspace.
    """
    b: float
    base: Optional[object] = None

    def __post_init__(self):
        if not (self.b >= 0.0):
            raise ValueError("cone half-aperture must be nonnegative")


def _safe_norm(x):
    # squaring a component below ~1e-154 drops into the subnormal
    # range and halves the mantissa; factor out the largest entry
    s = float(np.max(np.abs(x)))
    if s == 0.0 or not np.isfinite(s):
        return s
    return s * float(np.linalg.norm(x / s))


def slope(v: FrameVector) -> float:
    """Unstable-to-center component ratio of a center-unstable vector.

    Defined only inside E^cu; vectors with a stable component are
    rejected.  Returns ``inf`` for nonzero vectors with zero center
    component (the E^u boundary of the cone picture).
    """
    if not v.in_cu:
        raise ValueError("slope is defined for vectors in E^cu only "
                         "(stable component must be zero)")
    nu = _safe_norm(v.vu)
    nc = _safe_norm(v.vc)
    if nu == 0.0 and nc == 0.0:
        raise ValueError("slope of the zero vector is undefined")
    if nc == 0.0:
        return float("inf")
    return nu / nc


def cone_contains(cone: Cone, v: FrameVector) -> bool:
    """Membership test; the zero vector belongs to every cone."""
    if not v.in_cu:
        raise ValueError("cones live inside E^cu "
                         "(stable component must be zero)")
    if np.all(v.vc == 0.0) and np.all(v.vu == 0.0):
        return True
    return slope(v) <= cone.b


@dataclass(frozen=True)
class GraphGain:
    """Result of `graph_gain`: the certified gain factor and the norms
    it relates through  norm_graph >= (1 + xi) * norm_e."""
    xi: float
    norm_e: float
    norm_graph: float


def _unit_rows(n, dim, rng):
    w = rng.standard_normal((n, dim))
    nrm = np.linalg.norm(w, axis=1)
    keep = nrm > 1e-12
    return w[keep] / nrm[keep, None]


def graph_gain(a_e, a_f, lmap, samples=2048, seed=0) -> GraphGain:
    """Norm gain of a dominated block map restricted to a graph.

    ``a_e`` and ``a_f`` act on orthogonal invariant subspaces E and F
    with F dominating E, and ``lmap`` is the linear map E -> F whose
    graph G is the subspace of interest.  The function returns xi >= 0
    with  |A restricted to G| >= (1 + xi) |A restricted to E|,
    and xi > 0 whenever lmap is nonzero.

    For one-dimensional E the quotient has a closed form and the bound
    is an equality.  For higher-dimensional E the infimum over unit
    vectors of E is estimated by seeded sampling plus a local polish;
    the top singular direction of ``a_e`` is always included in the
    sample, which keeps the returned inequality valid by construction.
    """
    a_e = np.atleast_2d(np.asarray(a_e, dtype=float))
    a_f = np.atleast_2d(np.asarray(a_f, dtype=float))
    lm = np.asarray(lmap, dtype=float)
    de = a_e.shape[1]
    df = a_f.shape[1]
    lm = lm.reshape(df, de)

    norm_e = float(np.linalg.svd(a_e, compute_uv=False)[0])
    conorm_f = float(np.linalg.svd(a_f, compute_uv=False)[-1])
    if not norm_e < conorm_f:
        raise DominationError(
            "blocks are not dominated: |A_E| = %.17g >= m(A_F) = %.17g"
            % (norm_e, conorm_f))

    def ratio(v):
        # stretch of A at the graph point of v, relative to the E stretch
        ev = a_e @ v
        fv = a_f @ (lm @ v)
        lv = lm @ v
        num = (ev @ ev + fv @ fv) / (ev @ ev)
        den = 1.0 + lv @ lv
        return np.sqrt(num / den)

    if de == 1:
        v = np.ones(1)
        r = ratio(v)
        ev = float(a_e[0, 0])
        lv = lm[:, 0]
        flv = a_f @ lv
        stretch = np.sqrt((ev * ev + flv @ flv) / (1.0 + lv @ lv))
        return GraphGain(xi=float(r - 1.0), norm_e=abs(ev),
                         norm_graph=float(stretch))

    # sampled minimisation; v1 = top right-singular vector of a_e
    _, _, vt = np.linalg.svd(a_e)
    v1 = vt[0]
    rng = np.random.default_rng(np.random.Philox(key=seed))
    cand = np.vstack([v1[None, :], _unit_rows(samples, de, rng)])
    ratios = np.array([ratio(v) for v in cand])
    i = int(np.argmin(ratios))
    best_v, best_r = cand[i], ratios[i]

    from scipy.optimize import minimize
    res = minimize(lambda w: ratio(w / np.linalg.norm(w)), best_v,
                   method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 400})
    if res.fun < best_r:
        best_r = res.fun

    # graph norm estimate: max stretch over the sampled graph directions
    stretches = []
    for v in cand:
        w = np.concatenate([v, lm @ v])
        aw = np.concatenate([a_e @ v, a_f @ (lm @ v)])
        stretches.append(np.linalg.norm(aw) / np.linalg.norm(w))
    norm_graph = float(max(stretches))
    return GraphGain(xi=float(best_r - 1.0), norm_e=norm_e,
                     norm_graph=norm_graph)


@dataclass
class DominationReport:
    """Empirical block-norm ranges versus the declared rates."""
    block_norm_min: dict = field(default_factory=dict)
    block_norm_max: dict = field(default_factory=dict)
    violations: List[Tuple[int, str]] = field(default_factory=list)
    n_samples: int = 0

    @property
    def ok(self):
        return not self.violations


def _update_range(report, key, val):
    report.block_norm_min[key] = min(report.block_norm_min.get(key, val), val)
    report.block_norm_max[key] = max(report.block_norm_max.get(key, val), val)


def check_domination(spec: SplittingSpec, samples, slack=1e-12) -> DominationReport:
    """Check sampled frame derivatives against the splitting rates.

    ``samples`` yields either FrameMatrix items or (FrameMatrix, k)
    pairs where k counts the units of hyperbolic time realised by that
    step (suspension steps between roof crossings have k = 0 and are
    isometric on every block; the rate bounds are then raised to the
    power k).  Report-only: violations are collected, never raised.
    """
    lam1, mu1, lam2, mu2, lam3, mu3 = spec.rates
    rep = DominationReport()
    for idx, item in enumerate(samples):
        if isinstance(item, tuple):
            fm, k = item
            k = int(k)
        else:
            fm, k = item, 1
        rep.n_samples += 1
        svals = {}
        for name in "scu":
            blk = fm.block(name, name)
            sv = np.linalg.svd(blk, compute_uv=False)
            svals[name] = (float(sv[-1]), float(sv[0]))  # (conorm, norm)
            _update_range(rep, name, float(sv[0]))
        off = 0.0
        for r in "scu":
            for c in "scu":
                if r != c:
                    off = max(off, float(np.abs(fm.block(r, c)).max(initial=0.0)))
        if off > slack:
            rep.violations.append((idx, "off-block mass %.3g" % off))
        cs, ns = svals["s"]
        cc, nc = svals["c"]
        cu, nu = svals["u"]
        checks = [
            (ns <= mu1 ** k + slack, "stable norm %.17g > mu1^%d" % (ns, k)),
            (cs >= lam1 ** k - slack, "stable conorm %.17g < lam1^%d" % (cs, k)),
            (nc <= mu2 ** k + slack, "center norm %.17g > mu2^%d" % (nc, k)),
            (cc >= lam2 ** k - slack, "center conorm %.17g < lam2^%d" % (cc, k)),
            (nu <= mu3 ** k + slack, "unstable norm %.17g > mu3^%d" % (nu, k)),
            (cu >= lam3 ** k - slack, "unstable conorm %.17g < lam3^%d" % (cu, k)),
        ]
        for ok, msg in checks:
            if not ok:
                rep.violations.append((idx, msg))
    return rep
