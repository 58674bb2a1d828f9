"""Service-time distributions with closed-form Laplace transforms.

The analytic side of the package expresses every quantity through the
transforms L_k(s) = E[exp(-s*S_k)] of the per-source service laws, while
the simulator needs exact draws from the same laws.  Each family here
provides both, plus exact first and second transform derivatives and the
exact mean, so the two sides share a single model object.

Supported families: exponential, gamma, deterministic (point mass), and
one-level finite mixtures of the former three.
"""

from __future__ import annotations

import cmath
import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ServiceTimeModel",
    "Exponential",
    "Gamma",
    "Deterministic",
    "Mixture",
    "subset_mixture",
    "parse_service",
    "format_service",
]

MIXTURE_WEIGHT_TOL = 1e-12


def _check_argument(s) -> None:
    if isinstance(s, complex):
        raise TypeError("real transform argument expected; use laplace_complex")
    s = float(s)
    if not math.isfinite(s):
        raise ValueError(f"transform argument must be finite, got {s}")
    if s < 0:
        raise ValueError(f"transform argument must be nonnegative, got {s}")


class ServiceTimeModel:
    """Common interface of the service-time families."""

    def laplace(self, s: float) -> float:
        """Transform value E[exp(-s*S)] at real s >= 0; lies in (0, 1]."""
        _check_argument(s)
        return self._laplace(float(s))

    def laplace_derivative(self, s: float, order: int = 1) -> float:
        """Exact derivative of the transform at s >= 0, order 1 or 2.

        The first derivative is -E[S exp(-s*S)] <= 0; the second is
        E[S^2 exp(-s*S)] >= 0.
        """
        _check_argument(s)
        if order not in (1, 2):
            raise ValueError(f"derivative order must be 1 or 2, got {order}")
        return self._derivative(float(s), order)

    def laplace_complex(self, z: complex) -> complex:
        """Analytic continuation of the transform.

        Used internally by the numerical CDF inversion; no domain check.
        """
        return self._laplace_complex(complex(z))

    def mean(self) -> float:
        """Exact E[S]; equals -laplace_derivative(0.0)."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Exact draw(s); a float when size is None, else a float ndarray."""
        raise NotImplementedError

    def _laplace(self, s: float) -> float:
        raise NotImplementedError

    def _laplace_complex(self, z: complex) -> complex:
        raise NotImplementedError

    def _derivative(self, s: float, order: int) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class Exponential(ServiceTimeModel):
    """Exponential service with rate mu: L(s) = mu / (mu + s)."""

    rate: float

    def __post_init__(self):
        if not (isinstance(self.rate, (int, float)) and math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"exponential rate must be positive and finite, got {self.rate}")
        object.__setattr__(self, "rate", float(self.rate))

    def _laplace(self, s):
        return self.rate / (self.rate + s)

    def _laplace_complex(self, z):
        return self.rate / (self.rate + z)

    def _derivative(self, s, order):
        if order == 1:
            return -self.rate / (self.rate + s) ** 2
        return 2.0 * self.rate / (self.rate + s) ** 3

    def mean(self):
        return 1.0 / self.rate

    def sample(self, rng, size=None):
        # inverse CDF: exactly one uniform per draw
        u = rng.random(size)
        if size is None:
            return -math.log1p(-u) / self.rate
        return -np.log1p(-u) / self.rate


@dataclass(frozen=True)
class Gamma(ServiceTimeModel):
    """Gamma service with shape alpha, rate mu: L(s) = (1 + s/mu)^(-alpha)."""

    shape: float
    rate: float

    def __post_init__(self):
        if not (isinstance(self.shape, (int, float)) and math.isfinite(self.shape) and self.shape > 0):
            raise ValueError(f"gamma shape must be positive and finite, got {self.shape}")
        if not (isinstance(self.rate, (int, float)) and math.isfinite(self.rate) and self.rate > 0):
            raise ValueError(f"gamma rate must be positive and finite, got {self.rate}")
        object.__setattr__(self, "shape", float(self.shape))
        object.__setattr__(self, "rate", float(self.rate))

    def _laplace(self, s):
        return (1.0 + s / self.rate) ** (-self.shape)

    def _laplace_complex(self, z):
        return (1.0 + z / self.rate) ** (-self.shape)

    def _derivative(self, s, order):
        base = 1.0 + s / self.rate
        if order == 1:
            return -(self.shape / self.rate) * base ** (-self.shape - 1.0)
        return (self.shape * (self.shape + 1.0) / self.rate**2) * base ** (-self.shape - 2.0)

    def mean(self):
        return self.shape / self.rate

    def sample(self, rng, size=None):
        return rng.standard_gamma(self.shape, size) / self.rate


@dataclass(frozen=True)
class Deterministic(ServiceTimeModel):
    """Point mass at `value` >= 0: L(s) = exp(-s * value)."""

    value: float

    def __post_init__(self):
        if not (isinstance(self.value, (int, float)) and math.isfinite(self.value) and self.value >= 0):
            raise ValueError(f"deterministic value must be nonnegative and finite, got {self.value}")
        object.__setattr__(self, "value", float(self.value))

    def _laplace(self, s):
        return math.exp(-s * self.value)

    def _laplace_complex(self, z):
        return cmath.exp(-z * self.value)

    def _derivative(self, s, order):
        if order == 1:
            return -self.value * math.exp(-s * self.value)
        return self.value**2 * math.exp(-s * self.value)

    def mean(self):
        return self.value

    def sample(self, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)


@dataclass(frozen=True)
class Mixture(ServiceTimeModel):
    """Finite mixture of non-mixture families; weights sum to one.

    Only one level of mixing is supported: components must themselves be
    exponential, gamma, or deterministic.
    """

    weights: tuple[float, ...]
    components: tuple[ServiceTimeModel, ...]

    def __post_init__(self):
        weights = tuple(float(w) for w in self.weights)
        components = tuple(self.components)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)
        if len(weights) == 0:
            raise ValueError("mixture needs at least one component")
        if len(weights) != len(components):
            raise ValueError(
                f"got {len(weights)} weights for {len(components)} components"
            )
        for w in weights:
            if not (math.isfinite(w) and w > 0):
                raise ValueError(f"mixture weights must be positive and finite, got {w}")
        total = math.fsum(weights)
        if abs(total - 1.0) > MIXTURE_WEIGHT_TOL:
            raise ValueError(f"mixture weights must sum to 1 within {MIXTURE_WEIGHT_TOL}, got {total!r}")
        for comp in components:
            if isinstance(comp, Mixture):
                raise ValueError("nested mixtures are not supported")
            if not isinstance(comp, ServiceTimeModel):
                raise TypeError(f"mixture component must be a ServiceTimeModel, got {type(comp).__name__}")

    def _laplace(self, s):
        return math.fsum(w * c._laplace(s) for w, c in zip(self.weights, self.components))

    def _laplace_complex(self, z):
        return sum(w * c._laplace_complex(z) for w, c in zip(self.weights, self.components))

    def _derivative(self, s, order):
        return math.fsum(w * c._derivative(s, order) for w, c in zip(self.weights, self.components))

    def mean(self):
        return math.fsum(w * c.mean() for w, c in zip(self.weights, self.components))

    def sample(self, rng, size=None):
        cum = np.cumsum(self.weights)
        if size is None:
            idx = min(int(np.searchsorted(cum, rng.random(), side="right")), len(cum) - 1)
            return self.components[idx].sample(rng)
        idx = np.searchsorted(cum, rng.random(size), side="right")
        idx = np.minimum(idx, len(cum) - 1)
        out = np.empty(size)
        for i, comp in enumerate(self.components):
            mask = idx == i
            n = int(mask.sum())
            if n:
                out[mask] = comp.sample(rng, n)
        return out


def subset_mixture(rates, models, subset) -> ServiceTimeModel:
    """Service law of a packet whose source is known to lie in `subset`.

    Component weights are the arrival-rate shares lambda_k over the subset
    total.  A singleton subset returns that source's own model.  Mixture
    sources are flattened so the result stays one level deep.
    """
    rates = [float(r) for r in rates]
    if len(rates) != len(models):
        raise ValueError(f"got {len(rates)} rates for {len(models)} models")
    idx = sorted(set(int(k) for k in subset))
    if not idx:
        raise ValueError("subset must be nonempty")
    for k in idx:
        if not 0 <= k < len(rates):
            raise IndexError(f"source index {k} out of range for {len(rates)} sources")
    if len(idx) == 1:
        return models[idx[0]]
    total = math.fsum(rates[k] for k in idx)
    flat_w: list[float] = []
    flat_c: list[ServiceTimeModel] = []
    for k in idx:
        share = rates[k] / total
        model = models[k]
        if isinstance(model, Mixture):
            flat_w.extend(share * w for w in model.weights)
            flat_c.extend(model.components)
        else:
            flat_w.append(share)
            flat_c.append(model)
    return Mixture(tuple(flat_w), tuple(flat_c))


# ---------------------------------------------------------------------------
# distribution literals, as used by the config format


_CALL_RE = re.compile(r"^\s*([A-Za-z_]+)\s*\((.*)\)\s*$", re.S)


def _parse_number(text: str, literal: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"bad number {text.strip()!r} in distribution literal {literal!r}") from None


def _split_args(body: str) -> list[str]:
    """Split on top-level commas (commas inside parentheses do not count)."""
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(body):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(body[start:i])
            start = i + 1
    parts.append(body[start:])
    return parts


def parse_service(text: str) -> ServiceTimeModel:
    """Parse a distribution literal.

    Grammar: ``exp(rate)``, ``gamma(shape, rate)``, ``det(value)``, and
    ``mix(w1*lit1, w2*lit2, ...)`` where each inner literal is non-mix.
    """
    m = _CALL_RE.match(text)
    if m is None:
        raise ValueError(f"bad distribution literal {text.strip()!r}; expected name(args)")
    name = m.group(1).lower()
    body = m.group(2)
    if name == "mix":
        weights, comps = [], []
        for part in _split_args(body):
            if "*" not in part:
                raise ValueError(f"mixture term {part.strip()!r} must look like weight*literal in {text.strip()!r}")
            wtext, inner = part.split("*", 1)
            weights.append(_parse_number(wtext, text))
            comp = parse_service(inner)
            if isinstance(comp, Mixture):
                raise ValueError(f"nested mix() in {text.strip()!r}")
            comps.append(comp)
        return Mixture(tuple(weights), tuple(comps))
    args = [a for a in _split_args(body)]
    if name == "exp":
        if len(args) != 1:
            raise ValueError(f"exp() takes 1 argument, got {len(args)} in {text.strip()!r}")
        return Exponential(_parse_number(args[0], text))
    if name == "gamma":
        if len(args) != 2:
            raise ValueError(f"gamma() takes 2 arguments, got {len(args)} in {text.strip()!r}")
        return Gamma(_parse_number(args[0], text), _parse_number(args[1], text))
    if name == "det":
        if len(args) != 1:
            raise ValueError(f"det() takes 1 argument, got {len(args)} in {text.strip()!r}")
        return Deterministic(_parse_number(args[0], text))
    raise ValueError(f"unknown distribution {name!r} in {text.strip()!r}")


def format_service(model: ServiceTimeModel) -> str:
    """Canonical literal for `model`; parse_service inverts it exactly."""
    if isinstance(model, Exponential):
        return f"exp({model.rate!r})"
    if isinstance(model, Gamma):
        return f"gamma({model.shape!r}, {model.rate!r})"
    if isinstance(model, Deterministic):
        return f"det({model.value!r})"
    if isinstance(model, Mixture):
        inner = ", ".join(
            f"{w!r}*{format_service(c)}" for w, c in zip(model.weights, model.components)
        )
        return f"mix({inner})"
    raise TypeError(f"cannot format {type(model).__name__}")
