"""Closed-form age statistics of the multi-source Poisson pushout server.

Model: K independent Poisson packet sources with rates lambda_k feed a
single server that holds no buffer; a new packet always replaces the one
in service, and a packet departs only if its service requirement fits in
the gap before the next arrival.  Every quantity below is exact and is
expressed through the per-source service transforms L_k evaluated at the
aggregate rate lambda = sum_k lambda_k.

Conventions: sources are indexed 0..K-1 in this API; A_k denotes the
stationary age (time since generation of the newest delivered packet) of
source k.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .servicedist import ServiceTimeModel, subset_mixture

__all__ = [
    "SystemSpec",
    "AoIStatistics",
    "MarginalMoments",
    "SourcePalmMeans",
    "InversionAccuracyWarning",
    "departure_rate",
    "pushout_rate",
    "source_update_share",
    "aggregate_service_laplace",
    "marginal_aoi_laplace",
    "marginal_aoi_moments",
    "palm_means",
    "joint_aoi_laplace",
    "joint_aoi_laplace_two_source",
    "aoi_covariance",
    "aoi_correlation",
    "cc_lower_bound",
    "aoi_statistics",
    "marginal_aoi_cdf",
    "DEFAULT_PERMUTATION_CAP",
    "TALBOT_NODES",
    "INVERSION_RESIDUAL_TOL",
]

DEFAULT_PERMUTATION_CAP = 8
TALBOT_NODES = 64
INVERSION_RESIDUAL_TOL = 1e-6


class InversionAccuracyWarning(UserWarning):
    """Numerical CDF inversion residual exceeded the accuracy target."""


@dataclass
class SystemSpec:
    """Arrival rates and service-time models, one entry per source.

    Construction validates that every rate is positive and finite and that
    every source has a strictly positive completion probability
    L_k(lambda) at the aggregate rate (a packet must be able to beat the
    next arrival, otherwise no update ever happens and no stationary age
    exists; the check also rejects specs whose completion probability
    underflows to zero in float64).
    """

    rates: tuple[float, ...]
    services: tuple[ServiceTimeModel, ...]

    def __post_init__(self):
        self.rates = tuple(float(r) for r in self.rates)
        self.services = tuple(self.services)
        if len(self.rates) == 0:
            raise ValueError("at least one source is required")
        if len(self.rates) != len(self.services):
            raise ValueError(
                f"got {len(self.rates)} rates for {len(self.services)} service models"
            )
        for i, r in enumerate(self.rates):
            if not (math.isfinite(r) and r > 0):
                raise ValueError(f"source {i + 1}: arrival rate must be positive and finite, got {r}")
        for i, model in enumerate(self.services):
            if not isinstance(model, ServiceTimeModel):
                raise TypeError(
                    f"source {i + 1}: expected a ServiceTimeModel, got {type(model).__name__}"
                )
        lam = self.total_rate
        for i, model in enumerate(self.services):
            if model.laplace(lam) <= 0.0:
                raise ValueError(
                    f"source {i + 1}: completion probability is zero at aggregate rate {lam}"
                )

    @property
    def num_sources(self) -> int:
        return len(self.rates)

    @property
    def total_rate(self) -> float:
        return math.fsum(self.rates)


def _check_source_index(spec: SystemSpec, k: int) -> int:
    k = int(k)
    if not 0 <= k < spec.num_sources:
        raise IndexError(f"source index {k} out of range for {spec.num_sources} sources")
    return k


def aggregate_service_laplace(spec: SystemSpec, s: float) -> float:
    """Transform of the service law of a typical packet (rate-weighted mix)."""
    return math.fsum(r * m.laplace(s) for r, m in zip(spec.rates, spec.services)) / spec.total_rate


def departure_rate(spec: SystemSpec) -> float:
    """Long-run rate of delivered packets, lambda * L_S(lambda).

    Equivalently sum_k lambda_k L_k(lambda): each arrival survives with
    probability equal to its service transform at the aggregate rate.
    """
    lam = spec.total_rate
    return math.fsum(r * m.laplace(lam) for r, m in zip(spec.rates, spec.services))


def pushout_rate(spec: SystemSpec) -> float:
    """Long-run rate of packets replaced mid-service, lambda * (1 - L_S(lambda))."""
    return spec.total_rate - departure_rate(spec)


def source_update_share(spec: SystemSpec, k: int) -> float:
    """Fraction of deliveries that belong to source k; shares sum to one."""
    k = _check_source_index(spec, k)
    lam = spec.total_rate
    return spec.rates[k] * spec.services[k].laplace(lam) / departure_rate(spec)


def _source_update_rate(spec: SystemSpec, k: int) -> float:
    return spec.rates[k] * spec.services[k].laplace(spec.total_rate)


def marginal_aoi_laplace(spec: SystemSpec, k: int, s: float) -> float:
    """Transform E[exp(-s * A_k)] of the stationary age of source k.

    Closed form: lambda_k L_k(s + lambda) / (s + lambda_k L_k(s + lambda)).
    """
    k = _check_source_index(spec, k)
    s = float(s)
    if not (math.isfinite(s) and s >= 0):
        raise ValueError(f"transform argument must be nonnegative and finite, got {s}")
    lam = spec.total_rate
    num = spec.rates[k] * spec.services[k].laplace(s + lam)
    return num / (s + num)


class MarginalMoments(NamedTuple):
    mean: float
    variance: float
    cv: float


def marginal_aoi_moments(spec: SystemSpec, k: int) -> MarginalMoments:
    """Exact mean, variance, and coefficient of variation of A_k.

    mean = 1 / (lambda_k L_k(lambda)); the cv depends on the system only
    through lambda_k L_k'(lambda) and equals sqrt(1 + 2 lambda_k L_k'(lambda)),
    which is strictly below 1: sampling at delivery times makes the age
    less variable than an exponential of the same mean.
    """
    k = _check_source_index(spec, k)
    lam = spec.total_rate
    rate_k = spec.rates[k]
    el = rate_k * spec.services[k].laplace(lam)
    dl = rate_k * spec.services[k].laplace_derivative(lam)
    mean = 1.0 / el
    variance = (1.0 + 2.0 * dl) / el**2
    cv = math.sqrt(max(1.0 + 2.0 * dl, 0.0))
    return MarginalMoments(mean, variance, cv)


class SourcePalmMeans(NamedTuple):
    delay_mean: float
    peak_mean: float
    update_rate: float


def palm_means(spec: SystemSpec, k: int) -> SourcePalmMeans:
    """Per-delivery means for source k: delay, peak age, update rate.

    delay_mean = -L_k'(lambda)/L_k(lambda) is the mean system time of a
    delivered packet; the mean peak age adds one mean update interval:
    peak_mean = delay_mean + 1/update_rate.
    """
    k = _check_source_index(spec, k)
    lam = spec.total_rate
    lk = spec.services[k].laplace(lam)
    dk = spec.services[k].laplace_derivative(lam)
    delay_mean = -dk / lk
    update_rate = spec.rates[k] * lk
    return SourcePalmMeans(delay_mean, delay_mean + 1.0 / update_rate, update_rate)


def joint_aoi_laplace(spec: SystemSpec, s, max_sources: int = DEFAULT_PERMUTATION_CAP) -> float:
    """Joint transform E[exp(-sum_k s_k A_k)] of all K stationary ages.

    Evaluated as a sum over the K! orderings of the sources by update
    recency; the term for ordering (j_1, ..., j_K) is a product over
    positions of L_{j_m}(sbar + lambda) / (sbar + lbar * L_H(sbar + lambda))
    where H is the suffix {j_m, ..., j_K}, sbar and lbar are the suffix
    sums of s and of the rates, and L_H is the rate-weighted suffix
    mixture transform.  Suffix quantities are memoized per subset and the
    permutation sum is accumulated exactly with math.fsum.

    Cost grows as K!; refuses K above `max_sources` (default 8).
    """
    K = spec.num_sources
    svec = [float(v) for v in np.asarray(s, dtype=float).reshape(-1)]
    if len(svec) != K:
        raise ValueError(f"argument vector has length {len(svec)}, expected {K}")
    for v in svec:
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"transform arguments must be nonnegative and finite, got {v}")
    if K > max_sources:
        raise ValueError(
            f"{K} sources need {math.factorial(K)} permutation terms, above the cap "
            f"of {max_sources}! = {math.factorial(max_sources)}; raise max_sources to override"
        )
    lam = spec.total_rate
    nmask = 1 << K
    # per-subset suffix tables; index = bitmask over sources
    sbar = [0.0] * nmask
    lbar = [0.0] * nmask
    denom = [0.0] * nmask
    numer = [[0.0] * nmask for _ in range(K)]
    for mask in range(1, nmask):
        low = (mask & -mask).bit_length() - 1
        rest = mask & (mask - 1)
        sbar[mask] = sbar[rest] + svec[low]
        lbar[mask] = lbar[rest] + spec.rates[low]
        arg = sbar[mask] + lam
        acc = 0.0
        for k in range(K):
            if mask >> k & 1:
                val = spec.services[k].laplace(arg)
                numer[k][mask] = val
                acc += spec.rates[k] * val
        denom[mask] = sbar[mask] + acc  # sbar + lbar * L_H since lbar * L_H = acc
    full = nmask - 1
    terms = []
    for perm in itertools.permutations(range(K)):
        mask = full
        prod = 1.0
        for k in perm:
            prod *= numer[k][mask] / denom[mask]
            mask &= ~(1 << k)
        terms.append(prod)
    prefactor = 1.0
    for r in spec.rates:
        prefactor *= r
    return prefactor * math.fsum(terms)


def joint_aoi_laplace_two_source(spec: SystemSpec, s1: float, s2: float) -> float:
    """Two-source joint transform in its reduced closed form.

    Algebraically equal to joint_aoi_laplace for K = 2; kept separate as
    an independent route for cross-checking.
    """
    if spec.num_sources != 2:
        raise ValueError(f"two-source form needs exactly 2 sources, got {spec.num_sources}")
    s1 = float(s1)
    s2 = float(s2)
    for v in (s1, s2):
        if not (math.isfinite(v) and v >= 0):
            raise ValueError(f"transform arguments must be nonnegative and finite, got {v}")
    lam = spec.total_rate
    sbar = s1 + s2
    l1, l2 = spec.rates
    m1, m2 = spec.services
    ls_sbar = aggregate_service_laplace(spec, sbar + lam)
    outer = l1 * l2 / (sbar + lam * ls_sbar)
    term1 = m1.laplace(s1 + lam) * m2.laplace(sbar + lam) / (s1 + l1 * m1.laplace(s1 + lam))
    term2 = m2.laplace(s2 + lam) * m1.laplace(sbar + lam) / (s2 + l2 * m2.laplace(s2 + lam))
    return outer * (term1 + term2)


def aoi_covariance(spec: SystemSpec) -> float:
    """Cov(A_1, A_2) for a two-source system; always <= 0.

    Closed form: (1/(lambda L_S(lambda))) * sum_k L_k'(lambda)/L_k(lambda).
    The two ages compete for the same server, so they are negatively
    correlated for every parameter choice.
    """
    if spec.num_sources != 2:
        raise ValueError(f"covariance closed form needs exactly 2 sources, got {spec.num_sources}")
    lam = spec.total_rate
    dep = departure_rate(spec)
    total = math.fsum(
        m.laplace_derivative(lam) / m.laplace(lam) for m in spec.services
    )
    return total / dep


def aoi_correlation(spec: SystemSpec) -> float:
    """Correlation coefficient of (A_1, A_2); lies in [-1, 0]."""
    if spec.num_sources != 2:
        raise ValueError(f"correlation closed form needs exactly 2 sources, got {spec.num_sources}")
    cov = aoi_covariance(spec)
    v1 = marginal_aoi_moments(spec, 0).variance
    v2 = marginal_aoi_moments(spec, 1).variance
    if not (v1 > 0 and v2 > 0):
        raise ValueError("marginal variance is not positive; correlation undefined")
    return cov / math.sqrt(v1 * v2)


def cc_lower_bound(kind: str, alpha: float | None = None) -> float:
    """Universal lower bound on the age correlation for a service family.

    kind "deterministic": bound over all rates and all deterministic
    service values, -1/(2(e-1)), attained when both sources share the
    load equally and the service value is one mean interarrival.
    kind "gamma": bound for shape `alpha`,
    -1/(2((1+1/alpha)^(alpha+1) - 1)); approaches the deterministic bound
    as alpha -> infinity and 0 as alpha -> 0.
    """
    if kind == "deterministic":
        if alpha is not None:
            raise ValueError("alpha only applies to the gamma bound")
        return -1.0 / (2.0 * (math.e - 1.0))
    if kind == "gamma":
        if alpha is None or not (math.isfinite(alpha) and alpha > 0):
            raise ValueError(f"gamma bound needs a positive finite shape, got {alpha}")
        # (1+1/a)^(a+1) via exp/log1p to stay accurate for large shapes
        grow = math.exp((alpha + 1.0) * math.log1p(1.0 / alpha))
        return -1.0 / (2.0 * (grow - 1.0))
    raise ValueError(f"unknown family kind {kind!r}; expected 'deterministic' or 'gamma'")


@dataclass
class AoIStatistics:
    """Per-source age statistics plus pairwise dependence.

    Produced either from the closed forms (`provenance == "analytic"`,
    stderr fields None) or from simulation output
    (`provenance == "simulated"`, stderr fields filled).  The analytic
    pairwise covariance/correlation exists only for two sources; for
    K >= 3 the off-diagonal entries are NaN.
    """

    mean: np.ndarray
    variance: np.ndarray
    cv: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray
    provenance: str = "analytic"
    mean_stderr: np.ndarray | None = None
    variance_stderr: np.ndarray | None = None
    covariance_stderr: np.ndarray | None = None
    correlation_stderr: np.ndarray | None = None


def aoi_statistics(spec: SystemSpec) -> AoIStatistics:
    """Analytic AoIStatistics for `spec`."""
    K = spec.num_sources
    moments = [marginal_aoi_moments(spec, k) for k in range(K)]
    mean = np.array([m.mean for m in moments])
    variance = np.array([m.variance for m in moments])
    cv = np.array([m.cv for m in moments])
    covariance = np.full((K, K), np.nan)
    correlation = np.full((K, K), np.nan)
    np.fill_diagonal(covariance, variance)
    np.fill_diagonal(correlation, 1.0)
    if K == 2:
        cov = aoi_covariance(spec)
        cc = aoi_correlation(spec)
        covariance[0, 1] = covariance[1, 0] = cov
        correlation[0, 1] = correlation[1, 0] = cc
    return AoIStatistics(mean, variance, cv, covariance, correlation, provenance="analytic")


# ---------------------------------------------------------------------------
# marginal age CDF by numerical transform inversion


def _marginal_lt_complex(spec: SystemSpec, k: int, z: complex) -> complex:
    lam = spec.total_rate
    try:
        w = spec.services[k].laplace_complex(z + lam)
    except OverflowError:
        # cmath raises instead of returning inf when the exponent is huge,
        # which happens for point-mass components far left of the contour
        return 1.0 + 0.0j
    if not (math.isfinite(w.real) and math.isfinite(w.imag)):
        # the transform blew up far left of the contour; the age transform
        # ratio tends to 1 there and the node weight is negligible anyway
        return 1.0 + 0.0j
    num = spec.rates[k] * w
    return num / (z + num)


def _talbot_cdf(lt, x: float, nodes: int) -> float:
    """Invert lt(z)/z at x on the fixed-Talbot contour with `nodes` nodes."""
    M = int(nodes)
    r = 2.0 * M / (5.0 * x)
    theta = np.pi * np.arange(1, M) / M
    cot = np.cos(theta) / np.sin(theta)
    p = r * theta * (cot + 1j)
    sigma = theta + (theta * cot - 1.0) * cot
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        fp = np.array([lt(pk) / pk for pk in p], dtype=complex)
        terms = np.exp(x * p) * fp * (1.0 + 1j * sigma)
    terms = np.where(np.isfinite(terms), terms, 0.0)
    head = 0.5 * math.exp(r * x) * (lt(complex(r, 0.0)) / r).real
    return (2.0 / (5.0 * x)) * (head + float(terms.real.sum()))


def marginal_aoi_cdf(spec: SystemSpec, k: int, x, nodes: int = TALBOT_NODES):
    """P(A_k <= x), by numerical inversion of the marginal transform.

    Inverts marginal_aoi_laplace(spec, k, .)/s at x on a fixed-Talbot
    contour with `nodes` nodes and clamps the result to [0, 1].  The same
    inversion at 3/4 of the node count serves as a residual estimate;
    residuals above INVERSION_RESIDUAL_TOL raise an
    InversionAccuracyWarning but still return the value.

    `x` may be a scalar or an array of thresholds; arrays invert point by
    point and return an array of the same shape.
    """
    k = _check_source_index(spec, k)
    if np.ndim(x) > 0:
        flat = np.asarray(x, dtype=float).reshape(-1)
        out = np.array([marginal_aoi_cdf(spec, k, xi, nodes) for xi in flat])
        return out.reshape(np.shape(x))
    x = float(x)
    if not (math.isfinite(x) and x >= 0):
        raise ValueError(f"age threshold must be nonnegative and finite, got {x}")
    if x == 0.0:
        return 0.0

    def lt(z: complex) -> complex:
        return _marginal_lt_complex(spec, k, z)

    value = _talbot_cdf(lt, x, nodes)
    check = _talbot_cdf(lt, x, max(3 * nodes // 4, 12))
    residual = abs(value - check)
    if residual > INVERSION_RESIDUAL_TOL:
        warnings.warn(
            f"CDF inversion residual {residual:.3e} above {INVERSION_RESIDUAL_TOL:g} "
            f"at x={x:g} for source {k}",
            InversionAccuracyWarning,
            stacklevel=2,
        )
    return min(max(value, 0.0), 1.0)
