"""Closed-form characteristics of the batch-departure infinite-server queue.

Everything here is exact up to floating point (and, for the infinite sums,
an explicit truncation bound). Quantities that depend on the arrival law
only see it through the transform of the normalized inter-arrival time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath
import numpy as np
from scipy import stats

from .core import EXPONENTIAL, ArrivalModel, lst_complement, lst_normalized

SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


class CancellationError(ArithmeticError):
    """The factorial-moment recursion produced a negative moment."""

    def __init__(self, index: int, value: float, partial=None):
        super().__init__(f"factorial moment m_{index} = {value!r} < 0: cancellation destroyed it")
        self.index = index
        self.value = value
        self.partial = partial  # MomentTable holding m_0..m_{index-1}


class TruncationError(ArithmeticError):
    pass


def _check_rho(rho):
    if not rho > 0:
        raise ValueError("rho must be positive")


def log_stationary_tails(k_max: int, rho: float, arrival: ArrivalModel) -> np.ndarray:
    """log P{Q >= k} for k = 1..k_max; stays finite where the tails underflow."""
    _check_rho(rho)
    k = np.arange(1, k_max + 1, dtype=float)
    lead = np.log(lst_complement(arrival, k / rho) * rho / k)
    factors = np.asarray(lst_normalized(arrival, k[:-1] / rho), dtype=float)
    with np.errstate(divide="ignore"):
        return lead + np.concatenate(([0.0], np.cumsum(np.log(factors))))


def stationary_tails(k_max: int, rho: float, arrival: ArrivalModel) -> np.ndarray:
    """``P{Q >= k}`` for k = 1..k_max (index 0 holds k = 1)."""
    return np.exp(log_stationary_tails(k_max, rho, arrival))


def stationary_tail(k: int, rho: float, arrival: ArrivalModel) -> float:
    if k < 1:
        raise ValueError("tail is defined for k >= 1 (P{Q >= 0} = 1)")
    return float(stationary_tails(k, rho, arrival)[-1])


def stationary_pmf_vector(k_max: int, rho: float, arrival: ArrivalModel) -> np.ndarray:
    """pi_0..pi_k_max by differencing the tails."""
    tails = np.concatenate(([1.0], stationary_tails(k_max + 1, rho, arrival)))
    return np.maximum(tails[:-1] - tails[1:], 0.0)


def stationary_pmf(k: int, rho: float, arrival: ArrivalModel) -> float:
    if k < 0:
        raise ValueError("k must be non-negative")
    return float(stationary_pmf_vector(k, rho, arrival)[-1])


def poisson_tails(k_max: int, rho: float) -> np.ndarray:
    """Tails under Poisson arrivals, prod_{i<=k} rho/(rho+i)."""
    i = np.arange(1, k_max + 1, dtype=float)
    return np.cumprod(rho / (rho + i))


@dataclass(frozen=True)
class SeriesValue:
    value: float
    error_bound: float
    terms: int


def mean_stationary(rho: float, arrival: ArrivalModel, tol: float = 1e-12,
                    block: float = 5.0, max_terms: int = 50_000_000) -> SeriesValue:
    """E Q as the sum of the tails, with a geometric bound on what is left.

    The sum runs in blocks of ``floor(block * sqrt(rho))`` terms. After K terms
    the remainder is at most ``P_K r / (1 - r)`` where ``P_K`` is the product
    of the first K-1 transforms and ``r = E exp(-K A/rho)``, since the later
    factors are all below ``r``.
    """
    _check_rho(rho)
    if not tol > 0:
        raise ValueError("tol must be positive")
    width = max(int(block * math.sqrt(rho)), 64)
    total = 0.0
    log_prod = 0.0  # log prod_{i=1}^{k-1}, for the next k
    k0 = 1
    while k0 <= max_terms:
        k = np.arange(k0, k0 + width, dtype=float)
        factors = np.asarray(lst_normalized(arrival, k / rho), dtype=float)
        with np.errstate(divide="ignore"):
            logs = log_prod + np.concatenate(([0.0], np.cumsum(np.log(factors[:-1]))))
        lead = lst_complement(arrival, k / rho) * rho / k
        total += float(np.sum(lead * np.exp(logs)))
        log_prod = float(logs[-1] + math.log(factors[-1])) if factors[-1] > 0 else -math.inf
        k0 += width
        r = lst_normalized(arrival, (k0 - 1) / rho)
        bound = math.exp(log_prod) * r / (1.0 - r) if r < 1 else math.inf
        if bound < tol:
            return SeriesValue(total, bound, k0 - 1)
    raise TruncationError(f"tail sum did not reach tol={tol} within {max_terms} terms")


@dataclass(frozen=True)
class MomentTable:
    """Factorial moments m_0..m_n with a significance estimate per entry.

    ``digits[n]`` approximates how many significant decimal digits of m_n
    survive given the relative error ``m1_rel_error`` carried by m_1.
    ``lost_at`` is the first index whose moment has no significant digit left
    (``None`` if all survive).
    """

    rho: float
    m: tuple[float, ...]
    digits: tuple[float, ...]
    lost_at: int | None


def factorial_moments(n_max: int, rho: float, m1: float, m1_rel_error: float = 2.2e-16,
                      dps: int = 60) -> MomentTable:
    """Run m_{n+2} = (n+2)(rho m_n - m_{n+1}) from m_0 = 1, m_1 = ``m1``.

    The recursion is evaluated in ``dps``-digit arithmetic, once from ``m1``
    and once from a copy perturbed by ``m1_rel_error``; the gap between the two
    runs is the propagated error. Valid under Poisson arrivals only.
    """
    _check_rho(rho)
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    with mpmath.workdps(dps):
        r = mpmath.mpf(rho)
        base = mpmath.mpf(m1)
        shifted = base * (1 + mpmath.mpf(m1_rel_error))
        a = [mpmath.mpf(1), base]
        b = [mpmath.mpf(1), shifted]
        for n in range(n_max - 1):
            a.append((n + 2) * (r * a[n] - a[n + 1]))
            b.append((n + 2) * (r * b[n] - b[n + 1]))
        values, digits = [], []
        lost_at = None
        for n, (x, y) in enumerate(zip(a, b)):
            err = abs(x - y)
            if err == 0:
                d = 16.0
            elif x == 0:
                d = 0.0
            else:
                d = float(max(0, min(16, -mpmath.log10(err / abs(x)))))
            if d < 1 and lost_at is None:
                lost_at = n
            values.append(float(x))
            digits.append(d)
    for n, v in enumerate(values):
        if v < 0:
            lost = lost_at if lost_at is not None and lost_at < n else None
            partial = MomentTable(rho, tuple(values[:n]), tuple(digits[:n]), lost)
            raise CancellationError(n, v, partial)
    return MomentTable(rho, tuple(values), tuple(digits), lost_at)


def factorial_moments_direct(n_max: int, rho: float, arrival: ArrivalModel,
                             tol: float = 1e-15) -> np.ndarray:
    """E Q(Q-1)...(Q-n+1) by summing over the stationary pmf."""
    k_max = 64
    while stationary_tail(k_max, rho, arrival) > tol:
        k_max *= 2
    k_max += 4 * n_max
    pmf = stationary_pmf_vector(k_max, rho, arrival)
    k = np.arange(k_max + 1, dtype=float)
    out = np.empty(n_max + 1)
    falling = np.ones_like(k)
    for n in range(n_max + 1):
        out[n] = float(np.sum(falling * pmf))
        falling = falling * (k - n)
    return out


@dataclass(frozen=True)
class CoefficientTable:
    """Coefficients C[k, i] of P{Q(t)=k} = C[k,0] + sum_i C[k,i] exp(-(lam + i mu) t).

    Row k has entries i = 0..k+1; unused entries are zero.
    """

    lam: float
    mu: float
    coeffs: np.ndarray
    initial_pmf: np.ndarray

    @property
    def k_max(self) -> int:
        return self.coeffs.shape[0] - 1

    def evaluate(self, t) -> np.ndarray:
        t = float(t)
        if t < 0:
            raise ValueError("t must be non-negative")
        i = np.arange(1, self.k_max + 2, dtype=float)
        decay = np.exp(-(self.lam + i * self.mu) * t)
        return self.coeffs[:, 0] + self.coeffs[:, 1:] @ decay


def coefficient_table(k_max: int, initial_pmf, lam: float, mu: float) -> CoefficientTable:
    """Build the transient coefficients under Poisson arrivals in O(k_max^2).

    C[k,0] is the stationary pmf; for 1 <= i <= k,
    (k+1-i) C[k,i] = rho C[k-1,i] - sum_{l=i-1}^{k-1} C[l,i];
    C[k,k+1] closes row k so that t = 0 reproduces the initial pmf.
    """
    p0 = np.zeros(k_max + 1)
    given = np.asarray(initial_pmf, dtype=float)
    if np.any(given < 0) or abs(given.sum() - 1.0) > 1e-12:
        raise ValueError("initial pmf must be a probability vector (sum 1 within 1e-12)")
    if len(given) > k_max + 1 and given[k_max + 1:].sum() > 0:
        raise ValueError("initial pmf has mass above k_max")
    p0[: min(len(given), k_max + 1)] = given[: k_max + 1]
    if not (lam > 0 and mu > 0):
        raise ValueError("rates must be positive")
    rho = lam / mu
    pi = np.concatenate(([1.0], poisson_tails(k_max + 1, rho)))
    pi = pi[:-1] - pi[1:]
    C = np.zeros((k_max + 1, k_max + 2))
    colsum = np.zeros(k_max + 2)  # running sum over rows l of C[l, i]
    for k in range(k_max + 1):
        C[k, 0] = pi[k]
        if k >= 1:
            i = np.arange(1, k + 1)
            C[k, 1 : k + 1] = (rho * C[k - 1, 1 : k + 1] - colsum[1 : k + 1]) / (k + 1 - i)
        C[k, k + 1] = p0[k] - C[k, : k + 1].sum()
        colsum[: k + 2] += C[k, : k + 2]
    return CoefficientTable(lam, mu, C, p0)


def transient_pmf(t: float, k_max: int, initial_pmf, lam: float, mu: float) -> np.ndarray:
    """P{Q(t) = k} for k = 0..k_max under Poisson arrivals."""
    return coefficient_table(k_max, initial_pmf, lam, mu).evaluate(t)


def truncation_mass_bound(t: float, k_max: int, initial_pmf, lam: float) -> float:
    """Upper bound on P{Q(t) > k_max}: Q(t) <= Q(0) + Poisson(lam t) arrivals."""
    p0 = np.asarray(initial_pmf, dtype=float)
    n = np.arange(len(p0))
    return float(np.sum(p0 * stats.poisson.sf(k_max - n, lam * t)))


def mean_cycle(rho: float, lam: float, arrival: ArrivalModel) -> float:
    """Mean time between starts of consecutive busy periods."""
    _check_rho(rho)
    return 1.0 / (lam * lst_complement(arrival, 1.0 / rho))


def mean_level_arrivals(k: int, rho: float, arrival: ArrivalModel) -> float:
    """Mean number of level-k arrivals during one level-(k-1) sojourn."""
    if k < 2:
        raise ValueError("level arrivals are defined for k >= 2")
    _check_rho(rho)
    prev = (k - 1) / rho
    return (lst_normalized(arrival, prev) * lst_complement(arrival, k / rho)
            / lst_complement(arrival, prev))


def log_tail_from_levels(k: int, rho: float, lam: float, arrival: ArrivalModel) -> float:
    """log P{Q >= k} rebuilt as E E(k mu) / E C times the product of level means."""
    mu = lam / rho
    logs = sum(math.log(mean_level_arrivals(i, rho, arrival)) for i in range(2, k + 1))
    return -math.log(k * mu) - math.log(mean_cycle(rho, lam, arrival)) + logs


def tail_from_levels(k: int, rho: float, lam: float, arrival: ArrivalModel) -> float:
    return math.exp(log_tail_from_levels(k, rho, lam, arrival))


def first_buildup_tail(k: int, rho: float, arrival: ArrivalModel) -> float:
    """P{Y_1 >= k} from an empty start: prod_{i=1}^{k-1} E exp(-i A/rho)."""
    if k <= 1:
        return 1.0
    i = np.arange(1, k, dtype=float)
    with np.errstate(divide="ignore"):  # an underflowed factor gives log 0 and a zero tail
        return float(np.exp(np.sum(np.log(lst_normalized(arrival, i / rho)))))


def rayleigh_tail(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("x must be non-negative")
    out = np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def rayleigh_moment(n: int) -> float:
    """E zeta^n = n!! (sqrt(pi/2))^(n mod 2)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return double_factorial(n) * SQRT_HALF_PI ** (n % 2)


def rayleigh_tail_distance(rho: float, arrival: ArrivalModel, grid=None) -> float:
    """sup over the grid of |P{Q >= ceil(x sqrt(rho))} - exp(-x^2/2)|."""
    grid = np.round(np.arange(1, 31) / 10, 10) if grid is None else np.asarray(grid, float)
    ks = np.ceil(grid * math.sqrt(rho) - 1e-9).astype(int)
    ks = np.maximum(ks, 1)
    tails = stationary_tails(int(ks.max()), rho, arrival)
    return float(np.max(np.abs(tails[ks - 1] - rayleigh_tail(grid))))


def is_poisson(arrival: ArrivalModel) -> bool:
    return arrival.kind == EXPONENTIAL
