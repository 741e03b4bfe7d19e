"""Empirical measures and averaging diagnostics.

Approximates the physical measure two ways: Cesaro pushforwards of
Lebesgue samples on an unstable segment, and single-orbit Birkhoff
data.  On top of those sit visit-frequency statistics with return
times, forward/backward average comparisons, the across-orbit basin
dispersion, and the expansion diagnostic built from co-norms of the
inverse on the center-unstable plane.
"""

__all__ = [
    "UnstableDisk",
    "EmpiricalMeasure",
    "VisitStats",
    "ChartBox",
    "WholeSpace",
    "Complement",
    "CoordinateObservable",
    "BoxIndicator",
    "LogCentralStretch",
    "ForwardBackwardReport",
    "BasinRow",
    "BasinReport",
    "MostlyExpandingReport",
    "pushforward_measure",
    "orbit_measure",
    "cloud_stability",
    "integrate",
    "visit_frequency",
    "forward_backward_average",
    "basin_agreement",
    "mostly_expanding_diagnostic",
    "marginal_ks",
]

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _kernels
from .lyapunov import _apply, _batch_means, _cat_kernel_args, \
    _check_params, _record, xi_field
from .perturbation import g_inverse
from .systems import CatSuspension, GeodesicSurface, wrap01

_WEIGHT_TOL = 1e-12


class UnstableDisk:
    """Lebesgue samples on a segment of one strong-unstable leaf.

    The segment runs through the base point along the unstable
    direction with the given half-length; the m samples sit on a
    jittered grid (stratified, lower variance than i.i.d. draws),
    reproducible from the seed.
    """

    def __init__(self, system, base, half_length, m, seed=0):
        if m < 1:
            raise ValueError("need at least one sample")
        if not half_length > 0.0:
            raise ValueError("half_length must be positive")
        self.system = system
        self.base = np.asarray(base, dtype=float)
        self.half_length = float(half_length)
        self.m = int(m)
        self.seed = int(seed)
        rng = np.random.Generator(np.random.Philox(self.seed))
        grid = (np.arange(self.m) + rng.random(self.m)) / self.m
        self.offsets = (2.0 * grid - 1.0) * self.half_length

    def points(self):
        if isinstance(self.system, CatSuspension):
            xy = wrap01(self.base[:2]
                        + self.offsets[:, None] * self.system.v_u)
            out = np.empty((self.m, 3))
            out[:, :2] = xy
            out[:, 2] = self.base[2]
            return out
        if isinstance(self.system, GeodesicSurface):
            out = np.empty((self.m, 2, 2))
            for i, u in enumerate(self.offsets):
                out[i] = self.base @ np.array([[1.0, 0.0], [u, 1.0]])
            return out
        raise TypeError("no unstable-leaf parametrization for %r"
                        % type(self.system).__name__)


class EmpiricalMeasure:
    """Weighted point cloud with unit total mass."""

    PROVENANCES = ("disk-pushforward", "single-orbit")

    def __init__(self, points, weights, provenance):
        self.points = np.asarray(points, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        if len(self.points) != len(self.weights):
            raise ValueError("point and weight counts differ")
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(float(np.sum(self.weights)) - 1.0) > _WEIGHT_TOL:
            raise ValueError("weights must sum to 1 within %g"
                             % _WEIGHT_TOL)
        if provenance not in self.PROVENANCES:
            raise ValueError("unknown provenance %r" % (provenance,))
        self.provenance = provenance

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class VisitStats:
    """Visit counts and first-return times for one region."""

    region: str
    count: int
    n_steps: int
    frequency: float
    return_histogram: dict = field(compare=False)
    min_return: int | None

    def __post_init__(self):
        if not 0.0 <= self.frequency <= 1.0:
            raise ValueError("frequency must lie in [0, 1]")


class WholeSpace:
    label = "M"

    def contains(self, q):
        return True

    def contains_batch(self, pts):
        return np.ones(len(pts), dtype=bool)


class Complement:
    def __init__(self, region):
        self.region = region
        self.label = "not-" + region.label

    def contains(self, q):
        return not self.region.contains(q)

    def contains_batch(self, pts):
        return ~self.region.contains_batch(pts)


class ChartBox:
    """Open box |coords| < half in a local chart, strict on every
    face to match the support membership convention."""

    def __init__(self, chart, half, label):
        if not 0.0 < half <= chart.gamma:
            raise ValueError("box half-width must lie in (0, gamma]")
        self.chart = chart
        self.half = float(half)
        self.label = str(label)

    def contains(self, q):
        c = self.chart.to_chart(q)
        return c is not None and float(np.max(np.abs(c))) < self.half

    def contains_batch(self, pts):
        system = self.chart.system
        if isinstance(system, CatSuspension):
            q0, roof = self.chart.q0, system.roof
            d = np.remainder(pts[:, 2] - q0[2], roof)
            d = np.where(d > roof / 2.0, d - roof, d)
            dx = pts[:, :2] - q0[:2]
            dx -= np.round(dx)
            w = dx @ system.v_s
            z = dx @ system.v_u
            h = self.half
            return ((np.abs(w) < h) & (np.abs(d) < h) & (np.abs(z) < h))
        return np.array([self.contains(p) for p in pts], dtype=bool)


class CoordinateObservable:
    """One flattened ambient coordinate."""

    def __init__(self, index, label=None):
        self.index = int(index)
        self.label = label or "coord%d" % self.index

    def __call__(self, q):
        return float(np.asarray(q, dtype=float).ravel()[self.index])

    def batch(self, pts):
        return pts.reshape(len(pts), -1)[:, self.index]


class BoxIndicator:
    def __init__(self, region):
        self.region = region
        self.label = "in-" + region.label

    def __call__(self, q):
        return 1.0 if self.region.contains(q) else 0.0

    def batch(self, pts):
        return self.region.contains_batch(pts).astype(float)


class LogCentralStretch:
    """log of the one-step stretch along the settled center direction.

    Each evaluation settles the direction at the point, so this is the
    slow observable; keep clouds modest.
    """

    label = "log-central-stretch"

    def __init__(self, system, params, n_settle=80):
        self.system = system
        self.params = params
        self.n_settle = n_settle

    def __call__(self, q):
        val = xi_field(self.system, self.params, q, n_settle=self.n_settle)
        return float(np.log1p(val.xi))


def _orbit_points(system, params, q, n):
    """The n points q, map(q), ..., map^(n-1)(q) as one array."""
    q = np.asarray(q, dtype=float)
    if isinstance(system, CatSuspension):
        out = np.empty((n, 3))
        args = _cat_kernel_args(system, params)
        _kernels.cat_orbit(q[0], q[1], q[2], n, *args, out)
        return out
    if isinstance(system, GeodesicSurface) and (
            params is None or params.t == 0.0):
        out = np.empty((n, 2, 2))
        steps = np.stack(system._step_mats)
        cur = q
        for i in range(n):
            out[i] = cur
            cur, bad = _kernels.geodesic_advance(cur, 1, system.a1, steps,
                                                 system.MAX_REDUCE)
            if bad:
                raise RuntimeError("fundamental-domain reduction failed")
        return out
    out = np.empty((n,) + q.shape)
    cur = q
    for i in range(n):
        out[i] = cur
        cur = _apply(system, params, cur)
    return out


def _orbit_points_back(system, params, q, n):
    q = np.asarray(q, dtype=float)
    if isinstance(system, CatSuspension) and (
            params is None or params.t == 0.0):
        out = np.empty((n, 3))
        ai = system.A_INV
        _kernels.cat_orbit_back(q[0], q[1], q[2], n, system.roof,
                                ai[0, 0], ai[0, 1], ai[1, 0], ai[1, 1],
                                out)
        return out
    out = np.empty((n,) + q.shape)
    cur = q
    for i in range(n):
        out[i] = cur
        if params is None:
            cur = system.inverse(cur)
        else:
            cur = g_inverse(system, params, cur)
    return out


def _observable_values(observable, pts):
    if hasattr(observable, "batch"):
        vals = np.asarray(observable.batch(pts), dtype=float)
    else:
        vals = np.array([float(observable(p)) for p in pts])
    if not np.all(np.isfinite(vals)):
        raise ValueError("observable produced a non-finite value")
    return vals


def pushforward_measure(system, disk, n, params=None):
    """Cesaro average of the first n pushforwards of the disk samples.

    The cloud holds map^j(p_i) for every sample i and j < n, in fixed
    sample-major order, each with weight 1/(n m).
    """
    _check_params(system, params)
    if n < 1:
        raise ValueError("need at least one pushforward")
    start = disk.points()
    m = disk.m
    cloud = np.empty((m * n,) + start.shape[1:])
    for i in range(m):
        cloud[i * n:(i + 1) * n] = _orbit_points(system, params,
                                                 start[i], n)
    weights = np.full(m * n, 1.0 / (m * n))
    return EmpiricalMeasure(cloud, weights, "disk-pushforward")


def orbit_measure(system, q, n, params=None):
    """Uniformly weighted Birkhoff cloud of one orbit."""
    _check_params(system, params)
    if n < 1:
        raise ValueError("need at least one step")
    pts = _orbit_points(system, params, q, n)
    return EmpiricalMeasure(pts, np.full(n, 1.0 / n), "single-orbit")


def cloud_stability(system, disk, n, params=None):
    """Largest two-sample KS distance between the n- and 2n-clouds,
    over the flattened coordinates."""
    a = pushforward_measure(system, disk, n, params).points
    b = pushforward_measure(system, disk, 2 * n, params).points
    a = a.reshape(len(a), -1)
    b = b.reshape(len(b), -1)
    return max(stats.ks_2samp(a[:, j], b[:, j]).statistic
               for j in range(a.shape[1]))


def marginal_ks(measure, system):
    """KS distances of the cloud marginals from the invariant volume
    of the suspension (uniform in each coordinate)."""
    if not isinstance(system, CatSuspension):
        raise TypeError("volume marginals are only known for the "
                        "suspension model")
    pts = measure.points
    return (
        stats.kstest(pts[:, 0], "uniform").statistic,
        stats.kstest(pts[:, 1], "uniform").statistic,
        stats.kstest(pts[:, 2], "uniform",
                     args=(0.0, system.roof)).statistic,
    )


def integrate(measure, observable):
    vals = _observable_values(observable, measure.points)
    return float(np.dot(measure.weights, vals))


def visit_frequency(system, q, n_steps, region, params=None):
    """Visit frequency of the orbit to the region, with first-return
    times.  A chart-box region named U must never be revisited on the
    very next step; that would break the disjointness the perturbation
    construction relies on, so it is a hard error."""
    _check_params(system, params)
    if n_steps < 1:
        raise ValueError("need at least one step")
    pts = _orbit_points(system, params, q, n_steps)
    inside = region.contains_batch(pts)
    idx = np.flatnonzero(inside)
    gaps = np.diff(idx)
    hist = {}
    for gap in gaps:
        hist[int(gap)] = hist.get(int(gap), 0) + 1
    min_return = int(gaps.min()) if len(gaps) else None
    if region.label == "U" and min_return is not None and min_return < 2:
        raise RuntimeError("chart box revisited after a single step")
    return VisitStats(
        region=region.label,
        count=int(len(idx)),
        n_steps=int(n_steps),
        frequency=len(idx) / n_steps,
        return_histogram=hist,
        min_return=min_return,
    )


@dataclass(frozen=True)
class ForwardBackwardReport:
    forward: float
    backward: float
    gap: float
    se_forward: float
    se_backward: float
    n_steps: int


def forward_backward_average(system, observable, q, n_steps,
                             params=None, n_batches=100):
    """Forward and backward Birkhoff averages of the observable from
    the same start, with batch-mean standard errors."""
    _check_params(system, params)
    if n_steps < 10 ** 3:
        raise ValueError("need at least 1000 steps")
    fwd = _observable_values(observable,
                             _orbit_points(system, params, q, n_steps))
    bwd = _observable_values(observable,
                             _orbit_points_back(system, params, q,
                                                n_steps))
    f, bk = float(np.mean(fwd)), float(np.mean(bwd))
    se_f = float(np.std(_batch_means(fwd, n_batches), ddof=1)
                 / np.sqrt(n_batches))
    se_b = float(np.std(_batch_means(bwd, n_batches), ddof=1)
                 / np.sqrt(n_batches))
    return ForwardBackwardReport(f, bk, abs(f - bk), se_f, se_b, n_steps)


@dataclass(frozen=True)
class BasinRow:
    mean: float
    dispersion: float
    max_gap: float
    mean_within_se: float


@dataclass(frozen=True)
class BasinReport:
    rows: dict
    n_orbits: int
    n_steps: int


def basin_agreement(system, observables, starts, n_steps, params=None,
                    n_batches=100, seed=0):
    """Dispersion of forward averages across initial conditions.

    observables maps a label to an observable; starts is either a list
    of initial conditions or a count of seeded uniform draws.  The
    report holds, per label, the grand mean, the across-orbit standard
    deviation, the worst pairwise gap and the mean within-orbit
    standard error.  Small dispersion against the within-orbit scale
    is the numerical footprint of a unique physical measure.
    """
    _check_params(system, params)
    if isinstance(starts, (int, np.integer)):
        if not isinstance(system, CatSuspension):
            raise TypeError("random starts are only drawn on the "
                            "suspension; pass explicit points")
        rng = np.random.Generator(np.random.Philox(seed))
        draws = rng.random((int(starts), 3))
        draws[:, 2] *= system.roof
        starts = list(draws)
    starts = [np.asarray(s, dtype=float) for s in starts]
    if len(starts) < 2:
        raise ValueError("need at least two initial conditions")
    means = {name: [] for name in observables}
    ses = {name: [] for name in observables}
    for q in starts:
        pts = _orbit_points(system, params, q, n_steps)
        for name, obs in observables.items():
            vals = _observable_values(obs, pts)
            means[name].append(float(np.mean(vals)))
            ses[name].append(float(
                np.std(_batch_means(vals, n_batches), ddof=1)
                / np.sqrt(n_batches)))
    rows = {}
    for name in observables:
        mm = np.array(means[name])
        rows[name] = BasinRow(
            mean=float(np.mean(mm)),
            dispersion=float(np.std(mm, ddof=1)),
            max_gap=float(np.ptp(mm)),
            mean_within_se=float(np.mean(ses[name])),
        )
    return BasinReport(rows=rows, n_orbits=len(starts),
                       n_steps=n_steps)


@dataclass(frozen=True)
class MostlyExpandingReport:
    estimate: float
    stderr: float
    max_step: float
    min_step: float
    n_steps: int


def mostly_expanding_diagnostic(system, q, n_steps, params=None,
                                n_batches=100):
    """Birkhoff average of log of the inverse co-norm on the
    center-unstable plane along the orbit.

    Strictly negative values would certify non-uniform expansion; the
    neutral center pins the unperturbed value at exactly zero, and the
    shear can only push it up, so this is reported without assertion.
    """
    _check_params(system, params)
    if n_steps < 10 ** 3:
        raise ValueError("need at least 1000 steps")
    _, a, b, _, _, _ = _record(system, params, q, n_steps)
    # norm of the inverse of [[1,0],[a,b]] is 1/sigma_min; kick-free
    # steps are kept exactly zero (or exactly -log|b| if contracting)
    tt = 1.0 + a * a + b * b
    with np.errstate(invalid="ignore"):
        general = -0.5 * np.log((tt - np.sqrt(tt * tt - 4.0 * b * b))
                                / 2.0)
    vals = np.where(a == 0.0,
                    np.where(np.abs(b) >= 1.0, 0.0,
                             -np.log(np.abs(b))),
                    general)
    se = float(np.std(_batch_means(vals, n_batches), ddof=1)
               / np.sqrt(n_batches))
    return MostlyExpandingReport(
        estimate=float(np.mean(vals)),
        stderr=se,
        max_step=float(np.max(vals)),
        min_step=float(np.min(vals)),
        n_steps=n_steps,
    )
