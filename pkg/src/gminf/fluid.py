"""Growth-collapse fluid limit: path sampler, embedded chain and stationary laws.

Between jumps the level grows at rate ``lam``. From post-jump level ``x`` the
next pre-jump level ``y`` has ``P{y' >= y} = exp((x^2 - y^2)/2)``, sampled
exactly as ``sqrt(x^2 + 2E)``; the level then drops to ``B*y`` with B uniform
(or drawn from a general cut law).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import erf

from .core import CutLaw, RngStream

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_CHUNK = 4096
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


@dataclass
class FluidPath:
    """Piecewise-linear fluid trajectory.

    ``tau[n]``, ``pre[n]``, ``post[n]`` describe jump n+1; the level at time t
    is ``post[n-1] + lam*(t - tau[n-1])`` between jumps (``xi0`` before the first).
    """

    lam: float
    xi0: float
    horizon: float
    tau: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_jumps(self) -> int:
        return len(self.tau)

    def ledger_rows(self):
        for n in range(self.n_jumps):
            yield n + 1, self.tau[n], self.pre[n], self.post[n]

    def to_csv(self, handle, header_comment: str | None = None) -> None:
        if header_comment:
            handle.write(f"# {header_comment}\n")
        handle.write("n,tau,pre,post\n")
        for n, t, a, b in self.ledger_rows():
            handle.write(f"{n},{t:.17g},{a:.17g},{b:.17g}\n")

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """(start level, end level) of every linear piece, the last cut at the horizon."""
        starts = np.concatenate(([self.xi0], self.post))
        last_t = self.tau[-1] if self.n_jumps else 0.0
        ends = np.concatenate((self.pre, [starts[-1] + self.lam * (self.horizon - last_t)]))
        return starts, ends


def fluid_simulate(xi0: float, lam: float, horizon: float, rng: RngStream,
                   cut: CutLaw | None = None, max_jumps: int | None = None) -> FluidPath:
    """Sample a fluid path on [0, horizon] (or until ``max_jumps`` jumps)."""
    if xi0 < 0:
        raise ValueError("xi0 must be non-negative")
    if not lam > 0:
        raise ValueError("lam must be positive")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    cut = cut or CutLaw.uniform()
    g = rng.generator
    taus, pres, posts = [], [], []
    x, t = float(xi0), 0.0
    limit = math.inf if max_jumps is None else max_jumps
    done = False
    while not done:
        e = g.standard_exponential(_CHUNK)
        b = cut.sample(rng, _CHUNK)
        for j in range(_CHUNK):
            y = math.sqrt(x * x + 2.0 * e[j])
            t_next = t + (y - x) / lam
            if t_next > horizon or len(taus) >= limit:
                done = True
                break
            x_next = b[j] * y
            taus.append(t_next)
            pres.append(y)
            posts.append(x_next)
            x, t = x_next, t_next
    if max_jumps is not None and len(taus) >= max_jumps:
        horizon = t
    return FluidPath(lam, float(xi0), float(horizon), np.array(taus), np.array(pres),
                     np.array(posts), {"cut": cut.kind, "seed": rng.seed, "stream_id": rng.stream_id})


def sample_pre_jump(x: float, rng: RngStream, size=None):
    """Pre-jump level from post-jump level x by inverting its tail."""
    return np.sqrt(x * x + 2.0 * rng.generator.standard_exponential(size))


def first_jumps(n_paths: int, n_jumps: int, xi0: float, lam: float, rng: RngStream,
                cut: CutLaw | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """First ``n_jumps`` jumps of ``n_paths`` independent paths, vectorized across paths.

    Returns (tau, pre, post), each of shape (n_paths, n_jumps).
    """
    cut = cut or CutLaw.uniform()
    g = rng.generator
    tau = np.empty((n_paths, n_jumps))
    pre = np.empty_like(tau)
    post = np.empty_like(tau)
    x = np.full(n_paths, float(xi0))
    t = np.zeros(n_paths)
    for n in range(n_jumps):
        y = np.sqrt(x * x + 2.0 * g.standard_exponential(n_paths))
        t = t + (y - x) / lam
        x = cut.sample(rng, n_paths) * y
        tau[:, n], pre[:, n], post[:, n] = t, y, x
    return tau, pre, post


def fluid_value(path: FluidPath, t):
    """Level at time(s) t, right-continuous at jump instants."""
    ts = np.asarray(t, dtype=float)
    if np.any(ts < 0) or np.any(ts > path.horizon):
        raise ValueError(f"t must lie in [0, {path.horizon}]")
    levels = np.concatenate(([path.xi0], path.post))
    times = np.concatenate(([0.0], path.tau))
    idx = np.searchsorted(path.tau, ts, side="right")  # jumps at or before t
    out = levels[idx] + path.lam * (ts - times[idx])
    return float(out) if out.ndim == 0 else out


def series_terms(tol: float) -> int:
    """Terms K of the xi^2 series so that the expected remainder 3^-K is below tol."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    return max(1, math.ceil(math.log(1.0 / tol) / math.log(3.0)))


@dataclass(frozen=True)
class EmbeddedSample:
    """Stationary (post-jump, pre-jump) levels, as arrays of equal length."""

    xi: np.ndarray
    eta: np.ndarray
    terms: int

    def __len__(self) -> int:
        return len(self.xi)


def embedded_stationary_sampler(n_samples: int, rng: RngStream, tol: float = 1e-12,
                                chunk: int = 65536) -> EmbeddedSample:
    """Draw stationary (xi, eta) pairs.

    xi^2 is the series sum_n 2 E_n prod_{i<=n} U_i^2 (E_n unit exponentials,
    U_i uniform) truncated after K terms; its expected remainder is 3^-K.
    Then eta = sqrt(xi^2 + 2E).
    """
    k = series_terms(tol)
    g = rng.generator
    xi = np.empty(n_samples)
    eta = np.empty(n_samples)
    for lo in range(0, n_samples, chunk):
        m = min(chunk, n_samples - lo)
        e = g.standard_exponential((m, k))
        u2 = g.random((m, k)) ** 2
        xi2 = np.sum(2.0 * e * np.cumprod(u2, axis=1), axis=1)
        xi[lo : lo + m] = np.sqrt(xi2)
        eta[lo : lo + m] = np.sqrt(xi2 + 2.0 * g.standard_exponential(m))
    return EmbeddedSample(xi, eta, k)


def embedded_chain(xi0: float, n_steps: int, rng: RngStream, cut: CutLaw | None = None):
    """Run the post/pre-jump chain ``n_steps`` steps from ``xi0``; returns (post, pre)."""
    path = fluid_simulate(xi0, 1.0, math.inf, rng, cut, max_jumps=n_steps)
    return path.post, path.pre


def stationary_density_xi(x):
    x = np.asarray(x, dtype=float)
    out = SQRT_2_OVER_PI * np.exp(-0.5 * x * x)
    return float(out) if out.ndim == 0 else out


def stationary_density_eta(y):
    y = np.asarray(y, dtype=float)
    out = SQRT_2_OVER_PI * y * y * np.exp(-0.5 * y * y)
    return float(out) if out.ndim == 0 else out


def stationary_cdf_xi(x):
    """P{xi <= x}, the half-normal law."""
    return erf(np.asarray(x, dtype=float) / math.sqrt(2.0))


def rayleigh_density(x):
    x = np.asarray(x, dtype=float)
    return x * np.exp(-0.5 * x * x)


def ode_residual(x: float, h: float, f=stationary_density_xi) -> float:
    """Central-difference value of f'' + x f' + f at x."""
    if not x > h > 0:
        raise ValueError("need x > h > 0")
    fp, f0, fm = f(x + h), f(x), f(x - h)
    d2 = (fp - 2.0 * f0 + fm) / (h * h)
    d1 = (fp - fm) / (2.0 * h)
    return float(d2 + x * d1 + f0)


def integrate_between(f, a, b):
    """Vectorized int_a^b f by 16-point Gauss-Legendre (exact for polynomials up to degree 31)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    vals = f(mid[..., None] + half[..., None] * _GL_NODES)
    return half * (vals @ _GL_WEIGHTS)


@dataclass(frozen=True)
class OccupationComparison:
    exact: float  # E f(zeta) by quadrature
    estimate: float  # E int_xi^eta f / E(eta - xi)
    std_error: float
    n: int

    @property
    def z_score(self) -> float:
        if self.std_error == 0:
            return 0.0 if self.estimate == self.exact else math.inf
        return (self.estimate - self.exact) / self.std_error


def rayleigh_expectation(f) -> float:
    val, _ = integrate.quad(lambda x: f(np.asarray(x)) * x * math.exp(-0.5 * x * x), 0, math.inf,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


def occupation_ratio(f, samples: EmbeddedSample) -> OccupationComparison:
    """Both sides of E f(zeta) = E int_xi^eta f / E(eta - xi).

    The ratio estimate carries a delta-method standard error.
    """
    num = integrate_between(f, samples.xi, samples.eta)
    den = samples.eta - samples.xi
    n = len(den)
    r = num.mean() / den.mean()
    resid = num - r * den
    se = math.sqrt(resid.var(ddof=1) / n) / den.mean()
    return OccupationComparison(rayleigh_expectation(f), float(r), float(se), n)


def path_time_average(path: FluidPath, f) -> float:
    """(1/horizon) int_0^horizon f(level(t)) dt."""
    a, b = path.segments()
    return float(np.sum(integrate_between(f, a, b)) / path.lam / path.horizon)


def path_occupation_tail(path: FluidPath, grid) -> np.ndarray:
    """Fraction of [0, horizon] spent at level >= x, for each x in grid."""
    a, b = path.segments()
    grid = np.asarray(grid, dtype=float)
    above = np.clip(b[:, None] - np.maximum(a[:, None], grid[None, :]), 0.0, None)
    return above.sum(axis=0) / path.lam / path.horizon


def pre_jump_tail(y, x):
    """P{pre >= y | post = x} = exp((x^2 - y^2)/2) for y >= x."""
    y = np.asarray(y, dtype=float)
    return np.where(y >= x, np.exp(0.5 * (x * x - y * y)), 1.0)
