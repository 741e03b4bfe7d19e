"""Concrete partially hyperbolic systems behind one interface.

Two models with closed-form time-1 maps:

* `CatSuspension`: the suspension of the hyperbolic torus map
  [[2,1],[1,1]] under a constant roof.  With an irrational roof in
  (1, 2) every step crosses the roof either zero times or once, the
  frame derivative is an exact diagonal, and charts are exact linear
  isometries.  Everything about it is computable to the last bit,
  which is why the perturbation experiments run here.

* `GeodesicSurface`: the unit-speed geodesic flow on a closed genus-2
  hyperbolic surface, realised as right translation on the matrix
  group modulo the regular-octagon lattice.  Generators are derived at
  construction from the octagon geometry and checked against the
  defining relation; nothing about the group is hard-coded.

Both expose apply/inverse, the one-step derivative in the adapted
frame, and local charts aligned with the invariant bundles.
"""

__all__ = [
    "PartiallyHyperbolicSystem",
    "CatSuspension",
    "GeodesicSurface",
    "LocalChart",
    "ChartError",
    "make_chart",
]

import abc

import numpy as np

from .frames import FrameMatrix, SplittingSpec


class ChartError(ValueError):
    """Chart construction failed a dynamical precondition."""


def wrap01(x):
    """Fold torus coordinates into [0, 1)."""
    y = x - np.floor(x)
    # a coordinate that lands within one ulp of 1.0 folds to 0.0
    return np.where(y >= 1.0 - 1e-15, 0.0, y)


def wrap_pm(d):
    """Shortest representative of a torus difference, in [-1/2, 1/2)."""
    return d - np.round(d)


def circ_diff(a, period):
    """Signed circle difference in (-period/2, period/2]."""
    d = np.remainder(a, period)
    if d > period / 2.0:
        d -= period
    return d


class LocalChart:
    """Coordinates (w, y, z) on a box around a base point.

    The axes are aligned with the invariant bundles: w runs along the
    stable direction, y along the flow, z along the strong unstable
    one.  `to_chart` returns None for points outside the box, which
    doubles as the membership test for the perturbation support.
    """

    def __init__(self, system, q0, gamma, to_chart, from_chart, dpsi,
                 separated):
        self.system = system
        self.q0 = q0
        self.gamma = float(gamma)
        self._to = to_chart
        self._from = from_chart
        self._dpsi = dpsi
        self.separated = bool(separated)

    def to_chart(self, q):
        """Chart coordinates of q, or None if q is outside the box."""
        return self._to(q)

    def from_chart(self, p):
        return self._from(np.asarray(p, dtype=float))

    def dpsi(self, p):
        """Derivative of the chart map at p, in frame coordinates."""
        return self._dpsi(np.asarray(p, dtype=float))


class PartiallyHyperbolicSystem(abc.ABC):
    """Time-1 map of a flow with a uniform three-bundle splitting."""

    spec: SplittingSpec
    volume_preserving: bool

    @abc.abstractmethod
    def apply(self, q):
        ...

    @abc.abstractmethod
    def inverse(self, q):
        ...

    @abc.abstractmethod
    def frame_differential(self, q) -> FrameMatrix:
        """One-step derivative at q in the adapted frame."""

    @abc.abstractmethod
    def frame(self, q):
        """Columns: unit stable, flow and unstable directions at q."""

    @abc.abstractmethod
    def chart_at(self, q0, gamma, require_separation=True) -> LocalChart:
        ...

    @abc.abstractmethod
    def distance(self, q1, q2):
        ...

    @property
    def dims(self):
        return (self.spec.dim_s, self.spec.dim_c, self.spec.dim_u)


class CatSuspension(PartiallyHyperbolicSystem):
    """Constant-roof suspension of the [[2,1],[1,1]] torus map.

    State is (x1, x2, s) with x on the torus and s in [0, roof).  The
    time-1 map advances s by 1 and applies the torus map once per roof
    crossing; for roof in (1, 2) the crossing count k of a single step
    is 0 or 1, and the frame derivative is diag(lam_s^k, 1, lam_u^k).

    This flow is a suspension, so its strong bundles are not minimal;
    it is used as an exactly computable testbed and as the control
    that isolates the role of recurrence, not as an instance of the
    minimal-foliation hypotheses.
    """

    A = np.array([[2.0, 1.0], [1.0, 1.0]])
    A_INV = np.array([[1.0, -1.0], [-1.0, 2.0]])

    def __init__(self, roof=np.sqrt(2.0)):
        roof = float(roof)
        if not 1.0 <= roof < 2.0:
            # roof 1 is the degenerate rational control: the fiber is
            # frozen and every step crosses exactly once
            raise ValueError("roof must lie in [1, 2)")
        self.roof = roof
        self.lam_u = (3.0 + np.sqrt(5.0)) / 2.0
        self.lam_s = 1.0 / self.lam_u
        vu = np.array([1.0, (np.sqrt(5.0) - 1.0) / 2.0])
        vs = np.array([1.0, -(np.sqrt(5.0) + 1.0) / 2.0])
        self.v_u = vu / np.linalg.norm(vu)
        self.v_s = vs / np.linalg.norm(vs)
        for vec, lam in ((self.v_u, self.lam_u), (self.v_s, self.lam_s)):
            if np.max(np.abs(self.A @ vec - lam * vec)) > 1e-14:
                raise RuntimeError("eigendata failed validation")
        self.spec = SplittingSpec(
            1, 1, 1,
            (self.lam_s, self.lam_s, 1.0, 1.0, self.lam_u, self.lam_u))
        self.volume_preserving = True

    def crossing_count(self, q):
        """Roof crossings of the step starting at q: 0 or 1."""
        return 1 if q[2] + 1.0 >= self.roof else 0

    def apply(self, q):
        q = np.asarray(q, dtype=float)
        s = q[2] + 1.0
        if s >= self.roof:
            x = wrap01(self.A @ q[:2])
            return np.array([x[0], x[1], s - self.roof])
        return np.array([q[0], q[1], s])

    def inverse(self, q):
        q = np.asarray(q, dtype=float)
        s = q[2] - 1.0
        if s < 0.0:
            x = wrap01(self.A_INV @ q[:2])
            return np.array([x[0], x[1], s + self.roof])
        return np.array([q[0], q[1], s])

    def apply_batch(self, Q):
        """Vectorised step for an (n, 3) array of states."""
        Q = np.asarray(Q, dtype=float)
        s = Q[:, 2] + 1.0
        cross = s >= self.roof
        out = np.empty_like(Q)
        out[:, :2] = Q[:, :2]
        out[cross, :2] = wrap01(Q[cross, :2] @ self.A.T)
        out[:, 2] = np.where(cross, s - self.roof, s)
        return out

    def frame_differential(self, q) -> FrameMatrix:
        k = self.crossing_count(q)
        if k:
            d = np.diag([self.lam_s, 1.0, self.lam_u])
        else:
            d = np.eye(3)
        return FrameMatrix(d, self.spec)

    def frame(self, q):
        # constant frame: stable and unstable eigendirections in the
        # torus factor, the flow direction along the fiber
        f = np.zeros((3, 3))
        f[:2, 0] = self.v_s
        f[2, 1] = 1.0
        f[:2, 2] = self.v_u
        return f

    def distance(self, q1, q2):
        dx = wrap_pm(np.asarray(q1[:2]) - np.asarray(q2[:2]))
        ds = circ_diff(q1[2] - q2[2], self.roof)
        return float(np.sqrt(dx @ dx + ds * ds))

    def fiber_shift_gap(self):
        """Circle distance travelled by the fiber coordinate per step."""
        u = np.remainder(1.0, self.roof)
        return min(u, self.roof - u)

    def chart_at(self, q0, gamma, require_separation=True) -> LocalChart:
        q0 = np.asarray(q0, dtype=float)
        gamma = float(gamma)
        if not 0.0 < gamma < self.roof / 2.0:
            raise ChartError("chart radius must sit in (0, roof/2)")
        _check_nonperiodic(self, q0)
        # the step image of the box keeps its fiber interval; it is
        # displaced by the per-step fiber shift, so disjointness of U
        # from its image reduces to an interval gap on the circle
        separated = self.fiber_shift_gap() > 2.0 * gamma
        if require_separation and not separated:
            raise ChartError(
                "chart box of radius %.3g is not separated from its "
                "image (fiber shift gap %.6g)" % (gamma, self.fiber_shift_gap()))
        x0, s0 = q0[:2], q0[2]
        v_s, v_u, roof = self.v_s, self.v_u, self.roof

        def to_chart(q):
            y = circ_diff(q[2] - s0, roof)
            if abs(y) > gamma:
                return None
            dx = wrap_pm(np.asarray(q[:2]) - x0)
            w = float(dx @ v_s)
            z = float(dx @ v_u)
            if abs(w) > gamma or abs(z) > gamma:
                return None
            return np.array([w, y, z])

        def from_chart(p):
            w, y, z = p
            x = wrap01(x0 + w * v_s + z * v_u)
            return np.array([x[0], x[1],
                             np.remainder(s0 + y, roof)])

        def dpsi(p):
            # the chart is a linear isometry onto the frame axes
            return np.eye(3)

        return LocalChart(self, q0, gamma, to_chart, from_chart, dpsi,
                          separated)


def _check_nonperiodic(system, q0, n=10000, separation=1e-6):
    q = np.asarray(q0, dtype=float)
    p = q
    for k in range(n):
        p = system.apply(p)
        if system.distance(p, q) < separation:
            raise ChartError(
                "base point returns within %.1e of itself after %d steps"
                % (separation, k + 1))


# -- geodesic model ----------------------------------------------------

def _rot(phi):
    return np.array([[np.cos(phi / 2.0), np.sin(phi / 2.0)],
                     [-np.sin(phi / 2.0), np.cos(phi / 2.0)]])


def _trans(length):
    return np.array([[np.cosh(length / 2.0), np.sinh(length / 2.0)],
                     [np.sinh(length / 2.0), np.cosh(length / 2.0)]])


def octagon_generators():
    """Side-pairing isometries of the regular hyperbolic octagon.

    The octagon with vertex angle pi/4 has its side midpoints at
    distance b from the origin with cosh(b) = cot(pi/8).  Each
    generator is the orientation-preserving isometry carrying a side
    to the opposite one: the half-turn about the side midpoint,
    rotated between the two opposite side directions.  Returns the
    four generators pairing side k with side k+4.
    """
    b = np.arccosh(1.0 / np.tan(np.pi / 8.0))
    flip = _trans(b) @ _rot(np.pi) @ _trans(-b)
    gens = []
    for k in range(4):
        g = _rot(k * np.pi / 4.0) @ flip @ np.linalg.inv(
            _rot((k + 4) * np.pi / 4.0))
        gens.append(g)
    return gens


def commutator_basis(gens):
    """Standard-form generators: [a, b][c, d] is the identity.

    Rewrites the opposite-pairing relation of the octagon group into
    the genus-2 commutator form; the substitution is exact in the free
    group, so the product of the two commutators below reduces to the
    octagon relation word.
    """
    g0, g1, g2, g3 = gens
    inv = np.linalg.inv
    a = g0
    b = inv(g1)
    c = inv(g1) @ g0 @ g2
    d = inv(g3) @ g2
    return a, b, c, d


def _pm_identity_residual(m):
    i = np.eye(2)
    return min(float(np.max(np.abs(m - i))), float(np.max(np.abs(m + i))))


class GeodesicSurface(PartiallyHyperbolicSystem):
    """Geodesic flow time-1 map on a closed genus-2 hyperbolic surface.

    Points are unimodular 2x2 matrices modulo sign, reduced modulo the
    octagon lattice; the flow is right translation by the diagonal
    one-parameter subgroup.  The adapted frame is left invariant, so
    the one-step frame derivative is the constant diag(1/e, 1, e).
    """

    MAX_REDUCE = 1000

    def __init__(self):
        self.gens = octagon_generators()
        for g in self.gens:
            if abs(np.linalg.det(g) - 1.0) > 1e-12:
                raise RuntimeError("generator determinant drifted off 1")
        a, b, c, d = commutator_basis(self.gens)
        inv = np.linalg.inv
        rel = (a @ b @ inv(a) @ inv(b)) @ (c @ d @ inv(c) @ inv(d))
        if _pm_identity_residual(rel) > 1e-8:
            raise RuntimeError(
                "octagon generators fail the surface relation, residual %.3g"
                % _pm_identity_residual(rel))
        self._step_mats = [g for g in self.gens] + [inv(g) for g in self.gens]
        e = float(np.e)
        self.lam_u = np.exp(1.0)
        self.lam_s = np.exp(-1.0)
        self.a1 = np.diag([np.exp(0.5), np.exp(-0.5)])
        self.a1_inv = np.diag([np.exp(-0.5), np.exp(0.5)])
        self.spec = SplittingSpec(1, 1, 1, (1 / e, 1 / e, 1.0, 1.0, e, e))
        self.volume_preserving = True

    @staticmethod
    def _canon(m):
        flat = np.abs(m).ravel()
        if m.ravel()[int(np.argmax(flat))] < 0.0:
            return -m
        return m

    def reduce(self, p):
        """Fundamental-domain representative: greedily shrink the
        Frobenius norm (equivalently, the displacement of the origin)
        by generator moves until no move helps."""
        p = np.asarray(p, dtype=float)
        best = float(np.sum(p * p))
        for _ in range(self.MAX_REDUCE):
            improved = False
            for g in self._step_mats:
                cand = g @ p
                n = float(np.sum(cand * cand))
                if n < best * (1.0 - 1e-14):
                    p, best, improved = cand, n, True
                    break
            if not improved:
                return self._canon(p)
        raise RuntimeError("reduction did not terminate; generator set "
                           "is inconsistent")

    def apply(self, q):
        return self.reduce(np.asarray(q, dtype=float) @ self.a1)

    def inverse(self, q):
        return self.reduce(np.asarray(q, dtype=float) @ self.a1_inv)

    def frame_differential(self, q) -> FrameMatrix:
        return FrameMatrix(np.diag([self.lam_s, 1.0, self.lam_u]),
                           self.spec)

    def frame(self, q):
        # frame coordinates are the left-invariant ones already
        return np.eye(3)

    def distance(self, q1, q2):
        d = min(float(np.max(np.abs(q1 - q2))),
                float(np.max(np.abs(q1 + q2))))
        return d

    def chart_at(self, q0, gamma, require_separation=True) -> LocalChart:
        q0 = np.asarray(q0, dtype=float)
        gamma = float(gamma)
        if not 0.0 < gamma <= 0.25:
            raise ChartError("chart radius must sit in (0, 1/4] for the "
                             "group chart")
        _check_nonperiodic(self, q0)
        # the step moves every point a hyperbolic distance 1, while the
        # chart box has diameter well under 1: the image is separated
        separated = True
        q0_inv = np.linalg.inv(q0)

        def to_chart(q):
            m = q0_inv @ q
            if m[1, 1] < 0.0:
                m = -m
            if m[1, 1] <= 0.0:
                return None
            y = -2.0 * np.log(m[1, 1])
            w = m[0, 1] / m[1, 1]
            z = m[1, 0] / m[1, 1]
            if abs(w) > gamma or abs(y) > gamma or abs(z) > gamma:
                return None
            return np.array([w, y, z])

        def from_chart(p):
            w, y, z = p
            upper = np.array([[1.0, w], [0.0, 1.0]])
            diag = np.diag([np.exp(y / 2.0), np.exp(-y / 2.0)])
            lower = np.array([[1.0, 0.0], [z, 1.0]])
            return self._canon(q0 @ upper @ diag @ lower)

        def dpsi(p):
            w, y, z = p
            ey = np.exp(-y)
            return np.array([
                [ey, 0.0, 0.0],
                [2.0 * z * ey, 1.0, 0.0],
                [-z * z * ey, -z, 1.0],
            ])

        return LocalChart(self, q0, gamma, to_chart, from_chart, dpsi,
                          separated)


def make_chart(system, q0, gamma, require_separation=True) -> LocalChart:
    """Chart at a non-periodic base point, aligned with the bundles.

    Raises ChartError when the base point revisits itself within the
    scanned orbit length or when the box cannot be separated from its
    one-step image (the separation check can be waived explicitly for
    control experiments that never enter the box)."""
    return system.chart_at(q0, gamma, require_separation=require_separation)
