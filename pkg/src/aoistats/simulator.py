"""Exact-path simulation of the multi-source Poisson pushout server.

The pushout discipline makes every packet's fate depend only on its own
service requirement and the gap to the next arrival: an arrival always
enters service immediately and departs iff its service fits in that gap
(a tie counts as a departure).  Path generation therefore vectorizes:
arrival epochs come from one superposed exponential clock, sources from
one categorical draw per arrival, and the departure set is a simple
thinning.  Between departures every age grows with slope one, so all
path integrals (exponential functionals for transforms, polynomial ones
for moments, occupancy for empirical CDFs) are accumulated segment by
segment in closed form; nothing is discretized.

Randomness uses counter-based Philox streams keyed by
(seed, replication index, stream role), so any replication can be
regenerated independently and bit-identically.

Estimators combine replications as batches: the reported value is the
pooled (or batch-mean) estimate and the standard error is the sample
standard deviation across batches divided by sqrt(batches).
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analytics
from .analytics import AoIStatistics, SystemSpec

__all__ = [
    "DEFAULT_SEED",
    "DEFAULT_REPLICATIONS",
    "AoISnapshot",
    "PathAccumulator",
    "PalmRecords",
    "ReplicationCounts",
    "ReplicationResult",
    "Estimate",
    "PalmEstimates",
    "SimulationReport",
    "replication_rng",
    "default_burn_in",
    "default_s_grid",
    "segment_integral_exponential",
    "segment_integral_moments",
    "run_replication",
    "simulate",
    "estimate_joint_laplace",
    "estimate_joint_laplace_palm",
    "estimate_statistics",
    "estimate_palm",
    "estimate_departure_rate",
    "estimate_pushout_rate",
    "estimate_marginal_cdf",
]

DEFAULT_SEED = 112358
DEFAULT_REPLICATIONS = 32

_ROLE_INTERARRIVAL = 0
_ROLE_SOURCE = 1
_ROLE_SERVICE = 2

_MASK64 = (1 << 64) - 1


def replication_rng(seed: int, rep_index: int, role: int) -> np.random.Generator:
    """Counter-based generator for one (replication, stream role) pair.

    Philox keyed on (seed, rep_index, role); streams for different pairs
    never overlap and any pair can be reconstructed on its own.
    """
    if rep_index < 0:
        raise ValueError(f"replication index must be nonnegative, got {rep_index}")
    key = np.array(
        [int(seed) & _MASK64, ((int(rep_index) << 8) | int(role)) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))


def default_burn_in(spec: SystemSpec) -> float:
    """Burn-in long enough for many update cycles of the slowest source."""
    slowest = min(analytics._source_update_rate(spec, k) for k in range(spec.num_sources))
    return max(100.0 / slowest, 1000.0 / spec.total_rate)


def default_s_grid(num_sources: int) -> tuple[tuple[float, ...], ...]:
    """Default transform-argument vectors: constants plus a staggered one."""
    K = int(num_sources)
    cyc = (0.5, 1.0, 2.0)
    rows = [
        (0.0,) * K,
        (0.5,) * K,
        (1.0,) * K,
        (2.0,) * K,
        tuple(cyc[i % 3] for i in range(K)),
        (3.0,) * K,
    ]
    seen: list[tuple[float, ...]] = []
    for row in rows:
        if row not in seen:
            seen.append(row)
    return tuple(seen)


@dataclass(frozen=True)
class AoISnapshot:
    """Per-source (last update epoch, delay) state; age is delay + t - epoch."""

    update_epochs: np.ndarray
    delays: np.ndarray

    def ages(self, t: float) -> np.ndarray:
        return self.delays + (t - self.update_epochs)


def segment_integral_exponential(snapshot: AoISnapshot, t0: float, t1: float, s) -> float:
    """Exact integral of exp(-sum_k s_k A_k(t)) over [t0, t1).

    All ages grow with slope one on the segment, so the integral is
    exp(-s . a) * (1 - exp(-sbar L)) / sbar with a the ages at t0,
    sbar = sum(s) and L the segment length; plain L when sbar == 0.
    """
    if not t1 > t0:
        raise ValueError(f"segment must have positive length, got [{t0}, {t1})")
    s = np.asarray(s, dtype=float)
    a = snapshot.ages(t0)
    if s.shape != a.shape:
        raise ValueError(f"argument vector has shape {s.shape}, expected {a.shape}")
    if np.any(s < 0):
        raise ValueError("transform arguments must be nonnegative")
    L = t1 - t0
    sbar = float(s.sum())
    if sbar == 0.0:
        return L
    return math.exp(-float(s @ a)) * (-math.expm1(-sbar * L)) / sbar


def segment_integral_moments(snapshot: AoISnapshot, t0: float, t1: float):
    """Exact integrals of A_k, A_k^2, and A_j A_k over [t0, t1).

    Returns (age (K,), age_sq (K,), cross (K, K)); the cross diagonal
    equals age_sq.
    """
    if not t1 > t0:
        raise ValueError(f"segment must have positive length, got [{t0}, {t1})")
    a = snapshot.ages(t0)
    L = t1 - t0
    age = a * L + L**2 / 2.0
    age_sq = a**2 * L + a * L**2 + L**3 / 3.0
    cross = np.outer(a, a) * L + (a[:, None] + a[None, :]) * (L**2 / 2.0) + L**3 / 3.0
    return age, age_sq, cross


@dataclass
class PathAccumulator:
    """Closed-form path integrals over one or more replications.

    Tracks, per requested argument vector, the integral of
    exp(-s . A(t)); per source the integrals of A_k and A_k^2; all
    pairwise integrals of A_j A_k; optionally, per source, the occupancy
    time below each level of `cdf_grid`.  Accumulators with identical
    layout merge by component-wise addition.
    """

    s_grid: tuple[tuple[float, ...], ...]
    num_sources: int
    cdf_grid: np.ndarray | None = None
    elapsed: float = 0.0
    exp_integrals: np.ndarray = field(init=False)
    age_integrals: np.ndarray = field(init=False)
    age_sq_integrals: np.ndarray = field(init=False)
    cross_integrals: np.ndarray = field(init=False)
    cdf_occupancy: np.ndarray | None = field(init=False)

    def __post_init__(self):
        K = self.num_sources
        grid = []
        for row in self.s_grid:
            row = tuple(float(v) for v in row)
            if len(row) != K:
                raise ValueError(f"argument vector {row} has length {len(row)}, expected {K}")
            if any(v < 0 or not math.isfinite(v) for v in row):
                raise ValueError(f"transform arguments must be nonnegative and finite: {row}")
            grid.append(row)
        self.s_grid = tuple(grid)
        self.exp_integrals = np.zeros(len(self.s_grid))
        self.age_integrals = np.zeros(K)
        self.age_sq_integrals = np.zeros(K)
        self.cross_integrals = np.zeros((K, K))
        if self.cdf_grid is not None:
            self.cdf_grid = np.asarray(self.cdf_grid, dtype=float)
            self.cdf_occupancy = np.zeros((K, self.cdf_grid.size))
        else:
            self.cdf_occupancy = None

    def add_segment(self, snapshot: AoISnapshot, t0: float, t1: float) -> None:
        """Accumulate one constant-snapshot segment via the segment integrals."""
        for j, row in enumerate(self.s_grid):
            self.exp_integrals[j] += segment_integral_exponential(snapshot, t0, t1, row)
        age, age_sq, cross = segment_integral_moments(snapshot, t0, t1)
        self.age_integrals += age
        self.age_sq_integrals += age_sq
        self.cross_integrals += cross
        if self.cdf_grid is not None:
            a = snapshot.ages(t0)
            L = t1 - t0
            self.cdf_occupancy += np.clip(self.cdf_grid[None, :] - a[:, None], 0.0, L)
        self.elapsed += t1 - t0

    def add_segments(self, ages: np.ndarray, lengths: np.ndarray) -> None:
        """Vectorized bulk accumulation; rows of `ages` are segment starts."""
        ages = np.asarray(ages, dtype=float)
        lengths = np.asarray(lengths, dtype=float)
        if ages.ndim != 2 or ages.shape[1] != self.num_sources:
            raise ValueError(f"ages must be (n, {self.num_sources}), got {ages.shape}")
        if lengths.shape != (ages.shape[0],):
            raise ValueError("lengths must match the number of age rows")
        if np.any(lengths < 0):
            raise ValueError("segment lengths must be nonnegative")
        total = float(lengths.sum())
        L = lengths
        L2 = L * L
        for j, row in enumerate(self.s_grid):
            svec = np.array(row)
            sbar = float(svec.sum())
            if sbar == 0.0:
                self.exp_integrals[j] += total
            else:
                w = np.exp(-(ages @ svec))
                self.exp_integrals[j] += float(w @ (-np.expm1(-sbar * L))) / sbar
        self.age_integrals += ages.T @ L + L2.sum() / 2.0
        colsum_L2 = ages.T @ L2
        self.age_sq_integrals += (ages * ages).T @ L + colsum_L2 + float((L2 * L).sum()) / 3.0
        self.cross_integrals += (
            (ages.T * L) @ ages
            + (colsum_L2[:, None] + colsum_L2[None, :]) / 2.0
            + float((L2 * L).sum()) / 3.0
        )
        if self.cdf_grid is not None:
            x = self.cdf_grid
            block = max(1, 4_000_000 // max(x.size, 1))
            for lo in range(0, ages.shape[0], block):
                a = ages[lo : lo + block]
                Lb = L[lo : lo + block, None]
                for k in range(self.num_sources):
                    occ = np.clip(x[None, :] - a[:, k][:, None], 0.0, Lb)
                    self.cdf_occupancy[k] += occ.sum(axis=0)
        self.elapsed += total

    def merge(self, other: "PathAccumulator") -> "PathAccumulator":
        """Add another accumulator with the same layout into this one."""
        if other.s_grid != self.s_grid or other.num_sources != self.num_sources:
            raise ValueError("cannot merge accumulators with different layouts")
        if (self.cdf_grid is None) != (other.cdf_grid is None):
            raise ValueError("cannot merge accumulators with different CDF grids")
        if self.cdf_grid is not None and not np.array_equal(self.cdf_grid, other.cdf_grid):
            raise ValueError("cannot merge accumulators with different CDF grids")
        self.elapsed += other.elapsed
        self.exp_integrals += other.exp_integrals
        self.age_integrals += other.age_integrals
        self.age_sq_integrals += other.age_sq_integrals
        self.cross_integrals += other.cross_integrals
        if self.cdf_occupancy is not None:
            self.cdf_occupancy += other.cdf_occupancy
        return self


@dataclass
class PalmRecords:
    """Per-delivery observations of one replication, as parallel arrays.

    peak is NaN when the previous update of the source is the artificial
    start state (nothing real to peak against); gap is NaN for the final
    record when the next departure lies beyond the generated path.
    last_update/last_delay hold, per record, every source's latest update
    epoch and delay just after the departure (the departing source's own
    row included); covered marks records where every source has had at
    least one real update.
    """

    epoch: np.ndarray
    source: np.ndarray
    delay: np.ndarray
    peak: np.ndarray
    gap: np.ndarray
    last_update: np.ndarray
    last_delay: np.ndarray
    covered: np.ndarray

    def __len__(self) -> int:
        return self.epoch.size


@dataclass(frozen=True)
class ReplicationCounts:
    """Event counts; `arrivals/departures/pushouts` cover the whole run
    (0, horizon] while the `window_*` fields cover (burn_in, horizon].

    Conservation holds exactly:
    arrivals == departures + pushouts + in_flight.
    """

    arrivals: int
    departures: int
    pushouts: int
    in_flight: int
    window_arrivals: int
    window_departures: int
    window_pushouts: int


@dataclass
class ReplicationResult:
    accumulator: PathAccumulator
    records: PalmRecords
    counts: ReplicationCounts
    horizon: float
    burn_in: float
    late_sources: tuple[int, ...]

    @property
    def window_span(self) -> float:
        return self.horizon - self.burn_in


def _generate_arrivals(lam: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival epochs, strictly increasing, ending with the first epoch
    beyond the horizon (needed to settle the fate of the last packet)."""
    expect = lam * horizon
    n0 = int(expect + 6.0 * math.sqrt(expect + 1.0)) + 16
    epochs = np.cumsum(rng.exponential(1.0 / lam, size=n0))
    while epochs[-1] <= horizon:
        more = rng.exponential(1.0 / lam, size=max(n0 // 4, 64))
        epochs = np.concatenate([epochs, epochs[-1] + np.cumsum(more)])
    cut = int(np.searchsorted(epochs, horizon, side="right"))
    return epochs[: cut + 1]


def run_replication(
    spec: SystemSpec,
    horizon: float,
    burn_in: float,
    seed: int,
    rep_index: int = 0,
    s_grid=(),
    cdf_grid=None,
    trace_path=None,
) -> ReplicationResult:
    """Simulate one replication and accumulate all path quantities.

    The run starts empty at time 0 with every source's age state seeded
    at (update epoch 0, delay 0); statistics cover (burn_in, horizon].
    When `trace_path` is given, every arrival (value = service
    requirement) and departure (value = delay) up to the horizon is
    written there as CSV rows (epoch, kind, source, value).
    """
    horizon = float(horizon)
    burn_in = float(burn_in)
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValueError(f"horizon must be positive and finite, got {horizon}")
    if not (math.isfinite(burn_in) and 0 <= burn_in < horizon):
        raise ValueError(f"burn-in must satisfy 0 <= burn_in < horizon, got {burn_in}")
    K = spec.num_sources
    lam = spec.total_rate
    s_grid = tuple(tuple(float(v) for v in row) for row in s_grid)

    rng_arr = replication_rng(seed, rep_index, _ROLE_INTERARRIVAL)
    rng_src = replication_rng(seed, rep_index, _ROLE_SOURCE)
    rng_svc = replication_rng(seed, rep_index, _ROLE_SERVICE)

    epochs = _generate_arrivals(lam, horizon, rng_arr)
    n_packets = epochs.size - 1  # the final epoch is past the horizon
    if n_packets > 0:
        shares = np.cumsum(np.array(spec.rates) / lam)
        src = np.minimum(
            np.searchsorted(shares, rng_src.random(n_packets), side="right"), K - 1
        ).astype(np.int64)
        svc = np.empty(n_packets)
        for k in range(K):
            mask = src == k
            n = int(mask.sum())
            if n:
                svc[mask] = spec.services[k].sample(rng_svc, n)
        gaps = np.diff(epochs)
        completes = svc <= gaps  # a tie still departs
        dep_epoch_all = epochs[:-1][completes] + svc[completes]
        dep_src_all = src[completes]
        dep_delay_all = svc[completes]
        push_epochs = epochs[1:][~completes]
        in_flight = int(epochs[-2] + svc[-1] > horizon) if n_packets else 0
    else:
        src = np.zeros(0, dtype=np.int64)
        svc = np.zeros(0)
        dep_epoch_all = np.zeros(0)
        dep_src_all = np.zeros(0, dtype=np.int64)
        dep_delay_all = np.zeros(0)
        push_epochs = np.zeros(0)
        in_flight = 0

    # gap to the next departure, known for all but the last generated one
    gap_all = np.full(dep_epoch_all.size, np.nan)
    if dep_epoch_all.size > 1:
        gap_all[:-1] = np.diff(dep_epoch_all)

    within = dep_epoch_all <= horizon
    dep_epoch = dep_epoch_all[within]
    dep_src = dep_src_all[within]
    dep_delay = dep_delay_all[within]
    dep_gap = gap_all[within]

    counts = ReplicationCounts(
        arrivals=n_packets,
        departures=int(dep_epoch.size),
        pushouts=int((push_epochs <= horizon).sum()),
        in_flight=in_flight,
        window_arrivals=int((epochs[:-1] > burn_in).sum()),
        window_departures=int((dep_epoch > burn_in).sum()),
        window_pushouts=int(((push_epochs > burn_in) & (push_epochs <= horizon)).sum()),
    )

    # per-source update sequences with the artificial start state prepended
    own_U: list[np.ndarray] = []
    own_D: list[np.ndarray] = []
    peak = np.full(dep_epoch.size, np.nan)
    for k in range(K):
        own = np.flatnonzero(dep_src == k)
        Uk = np.concatenate([[0.0], dep_epoch[own]])
        Dk = np.concatenate([[0.0], dep_delay[own]])
        own_U.append(Uk)
        own_D.append(Dk)
        if own.size:
            pk = Dk[:-1] + np.diff(Uk)
            pk[0] = np.nan  # first-ever update peaks against the start state
            peak[own] = pk

    # exact path integrals over (burn_in, horizon]
    interior = (dep_epoch > burn_in) & (dep_epoch < horizon)
    starts = np.concatenate([[burn_in], dep_epoch[interior]])
    bounds = np.append(starts[1:], horizon)
    lengths = bounds - starts
    ages = np.empty((starts.size, K))
    for k in range(K):
        j = np.searchsorted(own_U[k], starts, side="right") - 1
        ages[:, k] = own_D[k][j] + (starts - own_U[k][j])
    accumulator = PathAccumulator(s_grid=s_grid, num_sources=K, cdf_grid=cdf_grid)
    accumulator.add_segments(ages, lengths)

    # per-delivery records over the window
    in_window = dep_epoch > burn_in
    w_epoch = dep_epoch[in_window]
    last_update = np.empty((w_epoch.size, K))
    last_delay = np.empty((w_epoch.size, K))
    covered = np.ones(w_epoch.size, dtype=bool)
    for k in range(K):
        j = np.searchsorted(own_U[k], w_epoch, side="right") - 1
        last_update[:, k] = own_U[k][j]
        last_delay[:, k] = own_D[k][j]
        covered &= j >= 1
    records = PalmRecords(
        epoch=w_epoch,
        source=dep_src[in_window],
        delay=dep_delay[in_window],
        peak=peak[in_window],
        gap=dep_gap[in_window],
        last_update=last_update,
        last_delay=last_delay,
        covered=covered,
    )

    late = tuple(
        k for k in range(K) if own_U[k].size < 2 or own_U[k][1] > burn_in
    )

    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "kind", "source", "value"])
            ev_epoch = np.concatenate([epochs[:-1], dep_epoch])
            ev_kind = ["arrival"] * n_packets + ["departure"] * dep_epoch.size
            ev_src = np.concatenate([src, dep_src])
            ev_val = np.concatenate([svc, dep_delay])
            order = np.argsort(ev_epoch, kind="stable")
            for i in order:
                writer.writerow(
                    [repr(float(ev_epoch[i])), ev_kind[int(i)], int(ev_src[i]) + 1, repr(float(ev_val[i]))]
                )

    return ReplicationResult(
        accumulator=accumulator,
        records=records,
        counts=counts,
        horizon=horizon,
        burn_in=burn_in,
        late_sources=late,
    )


# ---------------------------------------------------------------------------
# batch-means estimators


@dataclass(frozen=True)
class Estimate:
    """Point estimate with a batch-means standard error."""

    value: float
    stderr: float
    batches: int
    flag: str | None = None


def _combine(values, flag: str | None = None) -> Estimate:
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        raise ValueError(f"need at least 2 batches for a standard error, got {arr.size}")
    return Estimate(
        value=float(arr.mean()),
        stderr=float(arr.std(ddof=1) / math.sqrt(arr.size)),
        batches=int(arr.size),
        flag=flag,
    )


def _require_results(results) -> list[ReplicationResult]:
    results = list(results)
    if len(results) < 2:
        raise ValueError(f"need at least 2 replications, got {len(results)}")
    return results


def _grid_index(results, s) -> tuple[tuple[float, ...], int]:
    row = tuple(float(v) for v in np.asarray(s, dtype=float).reshape(-1))
    grid = results[0].accumulator.s_grid
    for r in results:
        if r.accumulator.s_grid != grid:
            raise ValueError("replications were run with different argument grids")
    try:
        return row, grid.index(row)
    except ValueError:
        raise ValueError(f"argument vector {row} was not simulated; grid is {grid}") from None


def estimate_joint_laplace(results, s) -> Estimate:
    """Time-average estimate of E[exp(-s . A)] from the path integrals."""
    results = _require_results(results)
    _, j = _grid_index(results, s)
    values = [r.accumulator.exp_integrals[j] / r.accumulator.elapsed for r in results]
    return _combine(values)


def estimate_joint_laplace_palm(results, s) -> Estimate:
    """Delivery-sampled product-form estimate of E[exp(-s . A)].

    Completely different route from estimate_joint_laplace: at each
    departure, sort the sources by update recency and combine their
    delays, the recency gaps, and the gap to the next departure into one
    product term; the transform is (update rate) * mean(term) / sum(s).
    Departures before every source has delivered at least once are
    skipped and counted in the flag.
    """
    results = _require_results(results)
    row, _ = _grid_index(results, s)
    svec = np.array(row)
    sbar = float(svec.sum())
    if sbar == 0.0:
        return Estimate(1.0, 0.0, len(results), flag="zero argument vector; value is the s -> 0 limit")
    values = []
    skipped = 0
    for r in results:
        rec = r.records
        valid = rec.covered & np.isfinite(rec.gap)
        skipped += int((~rec.covered).sum())
        if not valid.any():
            values.append(np.nan)
            continue
        lastU = rec.last_update[valid]
        lastD = rec.last_delay[valid]
        gap = rec.gap[valid]
        order = np.argsort(-lastU, axis=1, kind="stable")
        SU = np.take_along_axis(lastU, order, axis=1)
        SD = np.take_along_axis(lastD, order, axis=1)
        ss = svec[order]
        # suffix sums of the sorted arguments: ssuf[:, m] = sum_{j >= m} ss[:, j]
        ssuf = np.cumsum(ss[:, ::-1], axis=1)[:, ::-1]
        expo = (ss * SD).sum(axis=1)
        if SU.shape[1] > 1:
            expo += (ssuf[:, 1:] * (-np.diff(SU, axis=1))).sum(axis=1)
        term = -np.expm1(-sbar * gap) * np.exp(-expo)
        rate = rec.epoch.size / r.window_span
        values.append(rate * float(term.mean()) / sbar)
    flag = f"{skipped} warm-up departures skipped" if skipped else None
    if any(not math.isfinite(v) for v in values):
        return Estimate(math.nan, math.nan, len(results), flag="a replication had no usable departures")
    return _combine(values, flag=flag)


def estimate_statistics(results) -> AoIStatistics:
    """Simulated per-source age statistics with batch-means stderr.

    Point values are plug-ins from the pooled integrals; standard errors
    recompute the same statistic per replication and take the spread.
    """
    results = _require_results(results)
    K = results[0].accumulator.num_sources

    def stats_from(accs):
        T = math.fsum(a.elapsed for a in accs)
        age = np.sum([a.age_integrals for a in accs], axis=0)
        age_sq = np.sum([a.age_sq_integrals for a in accs], axis=0)
        cross = np.sum([a.cross_integrals for a in accs], axis=0)
        mean = age / T
        var = age_sq / T - mean**2
        cov = cross / T - np.outer(mean, mean)
        sd = np.sqrt(np.maximum(var, 0.0))
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = cov / np.outer(sd, sd)
        np.fill_diagonal(corr, 1.0)
        np.fill_diagonal(cov, var)
        return mean, var, cov, corr

    mean, var, cov, corr = stats_from([r.accumulator for r in results])
    per_rep = [stats_from([r.accumulator]) for r in results]
    B = len(results)
    root_b = math.sqrt(B)
    mean_se = np.std([p[0] for p in per_rep], axis=0, ddof=1) / root_b
    var_se = np.std([p[1] for p in per_rep], axis=0, ddof=1) / root_b
    cov_se = np.std([p[2] for p in per_rep], axis=0, ddof=1) / root_b
    corr_se = np.std([p[3] for p in per_rep], axis=0, ddof=1) / root_b
    cv = np.sqrt(np.maximum(var, 0.0)) / mean
    return AoIStatistics(
        mean=mean,
        variance=var,
        cv=cv,
        covariance=cov,
        correlation=corr,
        provenance="simulated",
        mean_stderr=mean_se,
        variance_stderr=var_se,
        covariance_stderr=cov_se,
        correlation_stderr=corr_se,
    )


@dataclass
class PalmEstimates:
    """Per-source delivery statistics (lists indexed by source)."""

    delay_mean: list[Estimate]
    peak_mean: list[Estimate]
    update_rate: list[Estimate]
    update_share: list[Estimate]


def _ratio_estimate(nums, dens, kind: str) -> Estimate:
    """Pooled-ratio estimate: value sums numerators over denominators,
    stderr comes from the per-replication ratios."""
    nums = np.asarray(nums, dtype=float)
    dens = np.asarray(dens, dtype=float)
    if dens.sum() == 0:
        return Estimate(math.nan, math.nan, len(nums), flag=f"no {kind}")
    with np.errstate(invalid="ignore", divide="ignore"):
        per = nums / dens
    usable = np.isfinite(per)
    if usable.sum() < 2:
        return Estimate(
            float(nums.sum() / dens.sum()), math.nan, int(usable.sum()),
            flag=f"too few replications with {kind} for a stderr",
        )
    flag = None
    if not usable.all():
        flag = f"{int((~usable).sum())} replications had no {kind}"
    return Estimate(
        value=float(nums.sum() / dens.sum()),
        stderr=float(per[usable].std(ddof=1) / math.sqrt(usable.sum())),
        batches=int(usable.sum()),
        flag=flag,
    )


def estimate_palm(results) -> PalmEstimates:
    """Delivery-averaged delay and peak means, update rates and shares."""
    results = _require_results(results)
    K = results[0].accumulator.num_sources
    delay, peakm, urate, share = [], [], [], []
    totals = np.array([len(r.records) for r in results], dtype=float)
    spans = np.array([r.window_span for r in results])
    for k in range(K):
        masks = [r.records.source == k for r in results]
        counts = np.array([int(m.sum()) for m in masks], dtype=float)
        delay_sums = [float(r.records.delay[m].sum()) for r, m in zip(results, masks)]
        peaks = [r.records.peak[m] for r, m in zip(results, masks)]
        peak_sums = [float(np.nansum(p)) for p in peaks]
        peak_counts = [int(np.isfinite(p).sum()) for p in peaks]
        label = f"deliveries for source {k + 1}"
        delay.append(_ratio_estimate(delay_sums, counts, label))
        peakm.append(_ratio_estimate(peak_sums, peak_counts, f"peaks for source {k + 1}"))
        urate.append(_ratio_estimate(counts, spans, label))
        share.append(_ratio_estimate(counts, totals, "deliveries"))
    return PalmEstimates(delay_mean=delay, peak_mean=peakm, update_rate=urate, update_share=share)


def estimate_departure_rate(results) -> Estimate:
    results = _require_results(results)
    return _combine([r.counts.window_departures / r.window_span for r in results])


def estimate_pushout_rate(results) -> Estimate:
    results = _require_results(results)
    return _combine([r.counts.window_pushouts / r.window_span for r in results])


def estimate_marginal_cdf(results, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Empirical P(A_k <= x) on the accumulators' CDF grid."""
    results = _require_results(results)
    grid = results[0].accumulator.cdf_grid
    if grid is None:
        raise ValueError("replications were run without a CDF grid")
    occ = np.sum([r.accumulator.cdf_occupancy[k] for r in results], axis=0)
    T = math.fsum(r.accumulator.elapsed for r in results)
    return grid.copy(), occ / T


# ---------------------------------------------------------------------------
# whole-run driver


@dataclass
class SimulationReport:
    """Everything `simulate` estimates, with config echo and flags."""

    spec: SystemSpec
    horizon: float
    burn_in: float
    replications: int
    seed: int
    s_grid: tuple[tuple[float, ...], ...]
    joint_laplace: dict[tuple[float, ...], Estimate]
    palm_joint_laplace: dict[tuple[float, ...], Estimate]
    statistics: AoIStatistics
    palm: PalmEstimates
    departure_rate: Estimate
    pushout_rate: Estimate
    flags: list[str]


def _run_one(args) -> ReplicationResult:
    spec, horizon, burn_in, seed, rep, s_grid, cdf_grid = args
    return run_replication(spec, horizon, burn_in, seed, rep, s_grid, cdf_grid)


def run_replications(
    spec: SystemSpec,
    horizon: float,
    burn_in: float,
    replications: int,
    seed: int,
    s_grid,
    cdf_grid=None,
    workers: int = 1,
) -> list[ReplicationResult]:
    """Run independent replications (optionally in parallel processes);
    results are always ordered by replication index."""
    if replications < 2:
        raise ValueError(f"need at least 2 replications, got {replications}")
    args = [
        (spec, horizon, burn_in, seed, rep, tuple(s_grid), cdf_grid)
        for rep in range(replications)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_one, args))
    return [_run_one(a) for a in args]


def simulate(
    spec: SystemSpec,
    horizon: float,
    burn_in: float | None = None,
    replications: int = DEFAULT_REPLICATIONS,
    seed: int = DEFAULT_SEED,
    s_grid=None,
    workers: int = 1,
) -> SimulationReport:
    """Simulate and estimate everything the analytic side can predict."""
    if burn_in is None:
        burn_in = default_burn_in(spec)
        if burn_in >= horizon:
            raise ValueError(
                f"default burn-in {burn_in:g} reaches the horizon {horizon:g}; "
                "pass burn_in explicitly or extend the horizon"
            )
    if s_grid is None:
        s_grid = default_s_grid(spec.num_sources)
    s_grid = tuple(tuple(float(v) for v in row) for row in s_grid)
    results = run_replications(spec, horizon, burn_in, replications, seed, s_grid, workers=workers)

    joint = {row: estimate_joint_laplace(results, row) for row in s_grid}
    palm_joint = {row: estimate_joint_laplace_palm(results, row) for row in s_grid}
    stats = estimate_statistics(results)
    palm = estimate_palm(results)

    flags: list[str] = []
    late: dict[int, int] = {}
    for r in results:
        for k in r.late_sources:
            late[k] = late.get(k, 0) + 1
    for k in sorted(late):
        flags.append(
            f"source {k + 1}: first delivery after burn-in in {late[k]} of "
            f"{len(results)} replications; its time averages include start-up ramp"
        )
    for row, est in palm_joint.items():
        if est.flag and "warm-up" in est.flag:
            flags.append(f"palm transform at s={row}: {est.flag}")
            break

    return SimulationReport(
        spec=spec,
        horizon=float(horizon),
        burn_in=float(burn_in),
        replications=int(replications),
        seed=int(seed),
        s_grid=s_grid,
        joint_laplace=joint,
        palm_joint_laplace=palm_joint,
        statistics=stats,
        palm=palm,
        departure_rate=estimate_departure_rate(results),
        pushout_rate=estimate_pushout_rate(results),
        flags=flags,
    )
