"""Physical memory parameters, derived rates and regime classification.

Only the collective coupling ``g*sqrt(N)`` ever enters the amplitude
equations, so it is stored as a single field ``g_sqrtN``.  Rates are in
inverse time units; parameter files conventionally use 1/us.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class MemoryParams:
    g_sqrtN: float
    kappa_in: float
    kappa_loss: float = 0.0
    gamma: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        for name in ("g_sqrtN", "kappa_in", "kappa_loss", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v!r}")
        if not math.isfinite(self.delta):
            raise ValueError("delta must be finite")
        if not self.kappa_in + self.kappa_loss > 0.0:
            raise ValueError("total cavity decay kappa must be positive")

    @property
    def kappa(self):
        return self.kappa_in + self.kappa_loss

    @classmethod
    def for_rate(cls, Gamma, kappa_in=1.0, **extra):
        """Parameters whose radiative linewidth ``g^2 N / kappa_in`` equals ``Gamma``."""
        return cls(g_sqrtN=math.sqrt(Gamma * kappa_in), kappa_in=kappa_in, **extra)


@dataclass(frozen=True)
class DerivedRates:
    kappa: float
    Gamma: float
    Gamma_tilde: float
    cooperativity: float | None  # None when the atoms are lossless
    lossless_atoms: bool


def derived(params: MemoryParams) -> DerivedRates:
    """Derived rates; the infinite-cooperativity case is flagged, not stored as inf."""
    if not params.kappa_in > 0.0:
        raise ValueError("kappa_in must be positive (no input port otherwise)")
    g2 = params.g_sqrtN ** 2
    kappa = params.kappa
    Gamma = g2 / params.kappa_in
    if params.gamma > 0.0:
        C = g2 / (kappa * params.gamma)
        return DerivedRates(kappa, Gamma, params.gamma + g2 / kappa, C, False)
    return DerivedRates(kappa, Gamma, g2 / kappa, None, True)


@dataclass(frozen=True)
class RegimeScores:
    atom_limited: float
    cavity_limited: float
    adiabatic: bool


def regime_check(params: MemoryParams, t_char: float, threshold: float = 10.0) -> RegimeScores:
    """Dimensionless products kappa*t and Gamma*t for the shortest timescale t."""
    if not t_char > 0:
        raise ValueError("t_char must be positive")
    d = derived(params)
    ka, ga = d.kappa * t_char, d.Gamma * t_char
    return RegimeScores(ka, ga, bool(ka >= threshold and ga >= threshold))


def loss_factor(params: MemoryParams) -> float:
    """Efficiency factor [C/(1+C)] * kappa_in/kappa."""
    d = derived(params)
    atoms = 1.0 if d.lossless_atoms else d.cooperativity / (1.0 + d.cooperativity)
    return atoms * params.kappa_in / d.kappa


def loss_rescale(eta0: float, params: MemoryParams) -> float:
    """Lossy efficiency from the lossless one (identity for lossless systems)."""
    if not 0.0 <= eta0 <= 1.0:
        raise ValueError("eta0 must lie in [0, 1]")
    d = derived(params)
    if d.lossless_atoms and params.kappa_loss == 0.0:
        return eta0
    return loss_factor(params) * eta0


# --- parameter files ---------------------------------------------------------

_KEYS = tuple(f.name for f in fields(MemoryParams))


def read_params(path) -> MemoryParams:
    """Parse a flat ``key=value`` file; blank lines and ``#`` comments ignored."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in _KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = float(val)
    missing = {"g_sqrtN", "kappa_in"} - values.keys()
    if missing:
        raise ValueError(f"{path}: missing {sorted(missing)}")
    return MemoryParams(**values)


def write_params(params: MemoryParams, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# cavity memory parameters, rates in 1/us\n")
        for key, val in asdict(params).items():
            fh.write(f"{key} = {val!r}\n")
