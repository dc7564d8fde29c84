"""Test potentials f(t, x) with exact partial derivatives of every order.

The sums integrate the gradient of f, so f plays the role of a potential:
the Stratonovich integral of d f along x is f(T, x_T) - f(0, x_0) minus the
time-derivative correction.

Three families are closed under differentiation:

- polynomial: sum of c * t^e0 * prod_l x_l^e_l
- sinusoid: A * sin(omega . x + nu t + phi)
- poly-gaussian: A * exp(nu t) * prod_l x_l^m_l exp(-x_l^2 / 2)

Points are passed with the component axis first: x[l] is the l-th coordinate
(scalar or array), broadcast against t.
"""

import logging
import math
from typing import Dict, Sequence, Tuple

import numpy as np
from numpy.polynomial import hermite_e

from app.errors import CapabilityError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 24
MAX_DIMENSION = 3


def _falling(e: int, a: int) -> int:
    """e (e-1) ... (e-a+1), zero once a > e."""
    if a > e:
        return 0
    return math.perm(e, a)


class TestFunction:
    """Base class; subclasses implement ``_partial``."""

    __test__ = False
    family = ""

    def __init__(self, d: int, max_order: int = DEFAULT_MAX_ORDER):
        if not 1 <= d <= MAX_DIMENSION:
            raise DomainError(f"Dimension must lie in [1, {MAX_DIMENSION}], got {d}")
        if max_order < 0:
            raise DomainError(f"max_order must be nonnegative, got {max_order}")
        self.d = d
        self.max_order = max_order

    def __call__(self, t, x):
        return eval_partial(self, 0, (0,) * self.d, t, x)

    def _partial(self, a0: int, a: Tuple[int, ...], t, x):
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"{type(self).__name__}(d={self.d}, max_order={self.max_order})"


class PolynomialFunction(TestFunction):
    family = "polynomial"

    def __init__(self, terms: Dict[Tuple[int, ...], float], d: int, max_order: int = DEFAULT_MAX_ORDER):
        super().__init__(d, max_order)
        self.terms = {}
        for exps, c in terms.items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != d + 1 or any(e < 0 for e in exps):
                raise DomainError(f"Polynomial exponents {exps} must be d+1={d + 1} nonnegative integers")
            self.terms[exps] = self.terms.get(exps, 0.0) + float(c)

    @classmethod
    def from_coefficients(cls, coefficients: Sequence[float], max_order: int = DEFAULT_MAX_ORDER):
        """1-D, time-independent sum_p c_p x^p."""
        return cls({(0, p): c for p, c in enumerate(coefficients) if c}, d=1, max_order=max_order)

    def _partial(self, a0, a, t, x):
        total = 0.0
        for exps, c in self.terms.items():
            factor = c * _falling(exps[0], a0)
            for e, order in zip(exps[1:], a):
                factor *= _falling(e, order)
            if factor == 0:
                continue
            value = factor * np.power(t, exps[0] - a0)
            for l, (e, order) in enumerate(zip(exps[1:], a)):
                if e - order:
                    value = value * np.power(x[l], e - order)
            total = total + value
        return total


class SinusoidFunction(TestFunction):
    family = "sinusoid"

    def __init__(
        self,
        omega: Sequence[float],
        nu: float = 0.0,
        amplitude: float = 1.0,
        phase: float = 0.0,
        max_order: int = DEFAULT_MAX_ORDER,
    ):
        super().__init__(len(omega), max_order)
        self.omega = np.asarray(omega, dtype=float)
        self.nu = float(nu)
        self.amplitude = float(amplitude)
        self.phase = float(phase)

    def _partial(self, a0, a, t, x):
        theta = self.nu * np.asarray(t, dtype=float) + self.phase
        for l in range(self.d):
            theta = theta + self.omega[l] * np.asarray(x[l], dtype=float)
        scale = self.amplitude * self.nu ** a0 * np.prod(self.omega ** np.asarray(a))
        # d^n/dtheta^n sin(theta) = sin(theta + n pi/2)
        n = (a0 + sum(a)) % 4
        wave = (np.sin, np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v))[n]
        return scale * wave(theta)


class PolyGaussianFunction(TestFunction):
    family = "poly-gaussian"

    def __init__(
        self,
        powers: Sequence[int],
        nu: float = 0.0,
        amplitude: float = 1.0,
        max_order: int = DEFAULT_MAX_ORDER,
    ):
        super().__init__(len(powers), max_order)
        self.powers = tuple(int(m) for m in powers)
        if any(m < 0 for m in self.powers):
            raise DomainError(f"Powers must be nonnegative, got {self.powers}")
        self.nu = float(nu)
        self.amplitude = float(amplitude)

    @staticmethod
    def _factor(m: int, n: int, x):
        """d^n/dx^n [x^m exp(-x^2/2)] by Leibniz with d^j exp(-x^2/2) = (-1)^j He_j exp(-x^2/2)."""
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for r in range(min(n, m) + 1):
            j = n - r
            basis = np.zeros(j + 1)
            basis[j] = 1.0
            total = total + (
                math.comb(n, r) * _falling(m, r) * (-1) ** j
                * np.power(x, m - r) * hermite_e.hermeval(x, basis)
            )
        return total * np.exp(-0.5 * x * x)

    def _partial(self, a0, a, t, x):
        value = self.amplitude * self.nu ** a0 * np.exp(self.nu * np.asarray(t, dtype=float))
        for l in range(self.d):
            value = value * self._factor(self.powers[l], a[l], x[l])
        return value


def eval_partial(f: TestFunction, a0: int, a: Sequence[int], t, x):
    """d_0^{a0} d^a f(t, x)."""
    a = tuple(int(v) for v in a)
    if len(a) != f.d:
        raise DomainError(f"Derivative multi-index {a} does not match d={f.d}")
    if a0 < 0 or any(v < 0 for v in a):
        raise DomainError("Derivative orders must be nonnegative")
    order = a0 + sum(a)
    if order > f.max_order:
        raise CapabilityError(
            f"{f.family} test function provides derivatives up to order {f.max_order}, {order} requested"
        )
    value = f._partial(a0, a, t, x)
    if np.ndim(value) == 0:
        return float(value)
    return value


def make_test_function(spec: dict) -> TestFunction:
    """Build a test function from its config map.

    Parameters may sit at the top level or under ``params``, e.g.
    ``{"family": "sinusoid", "omega": [2.0], "nu": 1.0, "d": 1}``.
    """
    if not isinstance(spec, dict):
        raise ValueError("Test function spec must be a mapping")
    raw = dict(spec.get("params") or {})
    raw.update({k: v for k, v in spec.items() if k != "params"})
    family = raw.get("family")
    max_order = int(raw.get("max_order", DEFAULT_MAX_ORDER))

    if family == "polynomial":
        if "coefficients" in raw:
            f = PolynomialFunction.from_coefficients(raw["coefficients"], max_order=max_order)
        elif "terms" in raw:
            d = int(raw.get("d", 1))
            terms = {tuple(exps): c for exps, c in raw["terms"]}
            f = PolynomialFunction(terms, d=d, max_order=max_order)
        else:
            raise ValueError("polynomial test function needs 'coefficients' or 'terms'")
    elif family == "sinusoid":
        if "omega" not in raw:
            raise ValueError("sinusoid test function needs 'omega'")
        f = SinusoidFunction(
            omega=raw["omega"],
            nu=raw.get("nu", 0.0),
            amplitude=raw.get("amplitude", 1.0),
            phase=raw.get("phase", 0.0),
            max_order=max_order,
        )
    elif family == "poly-gaussian":
        if "powers" not in raw:
            raise ValueError("poly-gaussian test function needs 'powers'")
        f = PolyGaussianFunction(
            powers=raw["powers"],
            nu=raw.get("nu", 0.0),
            amplitude=raw.get("amplitude", 1.0),
            max_order=max_order,
        )
    else:
        raise ValueError(f"Unknown test function family: {family!r}")

    if "d" in raw and int(raw["d"]) != f.d:
        raise ValueError(f"Test function declares d={raw['d']} but its parameters imply d={f.d}")
    logger.debug("Built %r", f)
    return f
