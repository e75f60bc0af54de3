"""Shared model types, inter-arrival laws and seeded random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

EXPONENTIAL = "exponential"
DETERMINISTIC = "deterministic"
UNIFORM = "uniform"
GAMMA = "gamma"

# integer codes shared with the compiled kernels
ARRIVAL_CODES = {EXPONENTIAL: 0, DETERMINISTIC: 1, UNIFORM: 2, GAMMA: 3}

ARRIVAL_ALIASES = {
    "exp": EXPONENTIAL,
    "exponential": EXPONENTIAL,
    "poisson": EXPONENTIAL,
    "det": DETERMINISTIC,
    "deterministic": DETERMINISTIC,
    "uniform": UNIFORM,
    "unif": UNIFORM,
    "gamma": GAMMA,
}


@dataclass(frozen=True)
class ArrivalModel:
    """Renewal inter-arrival law.

    Use the constructors :meth:`exponential`, :meth:`deterministic`,
    :meth:`uniform` and :meth:`gamma` rather than building one by hand.
    ``p1``/``p2`` hold the variant parameters: rate; period; (lo, hi);
    (shape, rate).
    """

    kind: str
    p1: float
    p2: float = 0.0

    def __post_init__(self):
        if self.kind not in ARRIVAL_CODES:
            raise ValueError(f"unknown arrival law {self.kind!r}")
        if self.kind == EXPONENTIAL and not self.p1 > 0:
            raise ValueError("exponential rate must be positive")
        if self.kind == DETERMINISTIC and not self.p1 > 0:
            raise ValueError("deterministic period must be positive")
        if self.kind == UNIFORM and not 0 <= self.p1 < self.p2:
            raise ValueError("uniform interval needs 0 <= lo < hi")
        if self.kind == GAMMA and not (self.p1 > 0 and self.p2 > 0):
            raise ValueError("gamma shape and rate must be positive")

    @classmethod
    def exponential(cls, rate: float) -> ArrivalModel:
        return cls(EXPONENTIAL, float(rate))

    @classmethod
    def deterministic(cls, period: float) -> ArrivalModel:
        return cls(DETERMINISTIC, float(period))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> ArrivalModel:
        return cls(UNIFORM, float(lo), float(hi))

    @classmethod
    def gamma(cls, shape: float, rate: float) -> ArrivalModel:
        return cls(GAMMA, float(shape), float(rate))

    @classmethod
    def from_name(cls, name: str, rate: float = 1.0, **shape) -> ArrivalModel:
        """Build the law ``name`` with mean ``1/rate``.

        ``uniform`` takes ``lo``/``hi`` describing the shape (default 1, 3) and
        ``gamma`` takes ``shape`` (default 2); both are rescaled to the rate.
        """
        kind = ARRIVAL_ALIASES.get(name.lower())
        if kind is None:
            raise ValueError(f"unknown arrival law {name!r}")
        if kind == EXPONENTIAL:
            return cls.exponential(rate)
        if kind == DETERMINISTIC:
            return cls.deterministic(1.0 / rate)
        if kind == UNIFORM:
            return cls.uniform(shape.get("lo", 1.0), shape.get("hi", 3.0)).scaled_to(rate)
        return cls.gamma(shape.get("shape", 2.0), 1.0).scaled_to(rate)

    @property
    def mean(self) -> float:
        if self.kind == EXPONENTIAL:
            return 1.0 / self.p1
        if self.kind == DETERMINISTIC:
            return self.p1
        if self.kind == UNIFORM:
            return 0.5 * (self.p1 + self.p2)
        return self.p1 / self.p2

    @property
    def rate(self) -> float:
        return 1.0 / self.mean

    @property
    def code(self) -> int:
        return ARRIVAL_CODES[self.kind]

    def scaled_to(self, rate: float) -> ArrivalModel:
        """Same normalized law, rescaled to mean ``1/rate``."""
        if not rate > 0:
            raise ValueError("rate must be positive")
        c = self.mean * rate  # A' = A / c
        if self.kind == EXPONENTIAL:
            return ArrivalModel.exponential(rate)
        if self.kind == DETERMINISTIC:
            return ArrivalModel.deterministic(1.0 / rate)
        if self.kind == UNIFORM:
            return ArrivalModel.uniform(self.p1 / c, self.p2 / c)
        return ArrivalModel.gamma(self.p1, self.p2 * c)

    def normalized_support(self) -> tuple[float, float]:
        if self.kind == UNIFORM:
            m = self.mean
            return self.p1 / m, self.p2 / m
        if self.kind == DETERMINISTIC:
            return 1.0, 1.0
        return 0.0, math.inf

    def normalized_variance(self) -> float:
        if self.kind == EXPONENTIAL:
            return 1.0
        if self.kind == DETERMINISTIC:
            return 0.0
        if self.kind == UNIFORM:
            a, b = self.normalized_support()
            return (b - a) ** 2 / 12.0
        return 1.0 / self.p1

    def describe(self) -> dict:
        names = {
            EXPONENTIAL: ("rate",),
            DETERMINISTIC: ("period",),
            UNIFORM: ("lo", "hi"),
            GAMMA: ("shape", "rate"),
        }[self.kind]
        out = {"law": self.kind}
        out.update(zip(names, (self.p1, self.p2)))
        return out

    def lst(self, s):
        return lst_normalized(self, s)


@dataclass(frozen=True)
class ModelParams:
    lam: float
    mu: float

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError("arrival and service rates must be positive")

    @classmethod
    def from_rho(cls, rho: float, lam: float = 1.0) -> ModelParams:
        if not rho > 0:
            raise ValueError("rho must be positive")
        return cls(lam, lam / rho)

    @property
    def rho(self) -> float:
        return self.lam / self.mu


FIFO = "fifo"
LIFO = "lifo"
GENERAL = "general"
DISCIPLINE_CODES = {FIFO: 0, LIFO: 1, GENERAL: 2}

CUT_UNIFORM = "uniform"
CUT_BETA = "beta"
CUT_FIXED = "fixed"
CUT_CODES = {CUT_UNIFORM: 0, CUT_BETA: 1, CUT_FIXED: 2}


@dataclass(frozen=True)
class CutLaw:
    """Law of the surviving fraction B on (0, 1)."""

    kind: str = CUT_UNIFORM
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in CUT_CODES:
            raise ValueError(f"unknown cut law {self.kind!r}")
        if self.kind == CUT_BETA and not (self.a > 0 and self.b > 0):
            raise ValueError("beta parameters must be positive")
        if self.kind == CUT_FIXED and not 0 < self.a < 1:
            raise ValueError("fixed fraction must lie strictly in (0, 1)")

    @classmethod
    def uniform(cls) -> CutLaw:
        return cls(CUT_UNIFORM)

    @classmethod
    def beta(cls, a: float, b: float) -> CutLaw:
        return cls(CUT_BETA, float(a), float(b))

    @classmethod
    def fixed(cls, fraction: float) -> CutLaw:
        return cls(CUT_FIXED, float(fraction))

    @property
    def code(self) -> int:
        return CUT_CODES[self.kind]

    @property
    def mean(self) -> float:
        if self.kind == CUT_UNIFORM:
            return 0.5
        if self.kind == CUT_BETA:
            return self.a / (self.a + self.b)
        return self.a

    def sample(self, rng: RngStream, size=None):
        g = rng.generator
        if self.kind == CUT_UNIFORM:
            out = g.random(size)
        elif self.kind == CUT_BETA:
            out = g.beta(self.a, self.b, size)
        else:
            return self.a if size is None else np.full(size, self.a)
        # random() can return exactly 0.0; keep B inside (0, 1)
        return np.maximum(out, np.finfo(float).tiny)


@dataclass(frozen=True)
class Discipline:
    kind: str = FIFO
    cut: CutLaw | None = None

    def __post_init__(self):
        if self.kind not in DISCIPLINE_CODES:
            raise ValueError(f"unknown discipline {self.kind!r}")
        if self.kind == GENERAL and self.cut is None:
            raise ValueError("general-fraction discipline needs a cut law")

    @classmethod
    def fifo(cls) -> Discipline:
        return cls(FIFO)

    @classmethod
    def lifo(cls) -> Discipline:
        return cls(LIFO)

    @classmethod
    def general(cls, cut: CutLaw) -> Discipline:
        return cls(GENERAL, cut)

    @property
    def code(self) -> int:
        return DISCIPLINE_CODES[self.kind]


@dataclass
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by NumPy's Philox counter-based generator, keyed through
    ``SeedSequence(seed, spawn_key=(stream_id,))``. The same pair replays the
    same sequence; distinct stream ids give independent streams. Instances are
    mutable and must not be shared between concurrent tasks.
    """

    seed: int
    stream_id: int = 0
    path: tuple[int, ...] = ()
    generator: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0 or any(i < 0 for i in self.path):
            raise ValueError("seed and stream ids must be non-negative")
        key = (int(self.stream_id), *map(int, self.path))
        ss = np.random.SeedSequence(int(self.seed), spawn_key=key)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def substream(self, index: int) -> RngStream:
        """Independent child stream, e.g. one per replication."""
        return RngStream(self.seed, self.stream_id, (*self.path, index))

    def replay(self) -> RngStream:
        """Fresh stream positioned at the start of this one."""
        return RngStream(self.seed, self.stream_id, self.path)


def sample_interarrival(model: ArrivalModel, rng: RngStream, size=None):
    g = rng.generator
    if model.kind == EXPONENTIAL:
        return g.exponential(1.0 / model.p1, size)
    if model.kind == DETERMINISTIC:
        return model.p1 if size is None else np.full(size, model.p1)
    if model.kind == UNIFORM:
        return g.uniform(model.p1, model.p2, size)
    return g.gamma(model.p1, 1.0 / model.p2, size)


def lst_normalized(model: ArrivalModel, s):
    """E exp(-s * A/EA) for the normalized inter-arrival time."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("transform argument must be non-negative")
    comp = np.asarray(lst_complement(model, s))
    # 1 - complement is exact enough while the transform is not small
    out = np.where(comp < 0.5, 1.0 - comp, _lst_direct(model, np.maximum(s, 1e-300)))
    return float(out) if out.ndim == 0 else out


def _lst_direct(model: ArrivalModel, s):
    if model.kind == EXPONENTIAL:
        return 1.0 / (1.0 + s)
    if model.kind == DETERMINISTIC:
        return np.exp(-s)
    if model.kind == GAMMA:
        k = model.p1
        return np.exp(-k * np.log1p(s / k))
    a, b = model.normalized_support()
    w = b - a
    return np.exp(-s * a) * -np.expm1(-s * w) / (s * w)


def lst_complement(model: ArrivalModel, s):
    """1 - E exp(-s * A/EA), computed without cancellation for small s."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("transform argument must be non-negative")
    if model.kind == EXPONENTIAL:
        out = s / (1.0 + s)
    elif model.kind == DETERMINISTIC:
        out = -np.expm1(-s)
    elif model.kind == GAMMA:
        k = model.p1
        out = -np.expm1(-k * np.log1p(s / k))
    else:
        a, b = model.normalized_support()
        out = _uniform_complement(s, a, b)
    return float(out) if out.ndim == 0 else out


def _excess(x):
    # x - 1 + exp(-x), with a series near zero
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, x, 0.0)
    series = xs * xs * (0.5 - xs * (1 / 6 - xs * (1 / 24 - xs / 120)))
    return np.where(small, series, x + np.expm1(-np.where(small, 1.0, x)))


def _uniform_complement(s, a, b):
    # (1/(b-a)) * int_a^b (1 - e^{-s x}) dx = (excess(sb) - excess(sa)) / (s (b-a))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (_excess(s * b) - _excess(s * a)) / (s * (b - a))
    return np.where(s == 0, 0.0, out)
