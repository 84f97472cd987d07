"""Synthetic markets with known preferences.

The default design has ``n`` students and C colleges with

    u_ic = beta_d[c] d_ic + beta_s[c] s_i + beta_z[c] z_i + sigma_eps[c] eps_ic
    u_i0 = eps_i0
    v_ci = gamma_w[c] w_ic + gamma_m[c] m_i + gamma_z[c] z_i + eta_ci

with ``d`` the demand shifter (stored as ``market.y``), ``w`` the supply
shifter, and ``(s, z, m)`` the shared covariates ``market.z``. Covariate
defaults are N(0, 36) except s ~ N(5, 36); shocks are standard normal.
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .market import LatentUtilities, Market, Matching, deferred_acceptance
from .model import IndexModel

Z_NAMES = ("s", "z", "m")


def _rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_seq))


def substreams(seed: int, n: int = 3) -> list[np.random.Generator]:
    """Independent counter-based generators: covariates, student shocks,
    college shocks (in that order)."""
    return [_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class DgpConfig:
    n_students: int = 3000
    capacities: tuple[int, ...] = (750, 700, 750)
    beta_d: tuple[float, ...] = (-1.0, -1.0, -1.0)
    beta_s: tuple[float, ...] = (1.0, 1.0, 1.0)
    beta_z: tuple[float, ...] = (1.0, 1.0, 1.0)
    gamma_w: tuple[float, ...] = (1.0, 1.0, 1.0)
    gamma_m: tuple[float, ...] = (1.0, 1.0, 1.0)
    gamma_z: tuple[float, ...] = (1.0, 1.0, 1.0)
    sigma_eps: tuple[float, ...] = (1.0, 1.0, 1.0)
    # (mean, variance) per covariate; "N(0,36)" is variance 36
    covariates: dict[str, tuple[float, float]] = field(default_factory=lambda: {
        "d": (0.0, 36.0), "s": (5.0, 36.0), "z": (0.0, 36.0), "w": (0.0, 36.0), "m": (0.0, 36.0)})
    seed: int = 0

    def __post_init__(self):
        self.capacities = tuple(int(q) for q in self.capacities)
        C = len(self.capacities)
        for name in ("beta_d", "beta_s", "beta_z", "gamma_w", "gamma_m", "gamma_z", "sigma_eps"):
            val = tuple(float(x) for x in getattr(self, name))
            if len(val) != C:
                raise ConfigError(f"{name} needs {C} entries, got {len(val)}")
            setattr(self, name, val)
        self.validate()

    def validate(self):
        if self.n_students < 1:
            raise ConfigError("n_students must be positive")
        if any(q < 1 for q in self.capacities):
            raise ConfigError("capacities must be >= 1")
        if sum(self.capacities) >= self.n_students:
            raise ConfigError(
                f"no excess demand: {sum(self.capacities)} seats for {self.n_students} students")
        missing = {"d", "s", "z", "w", "m"} - set(self.covariates)
        if missing:
            raise ConfigError(f"covariate distributions missing for {sorted(missing)}")
        for k, (_, var) in self.covariates.items():
            if not var > 0:
                raise ConfigError(f"variance of {k} must be positive")
        if any(s <= 0 for s in self.sigma_eps):
            raise ConfigError("sigma_eps must be positive")

    @property
    def n_colleges(self) -> int:
        return len(self.capacities)

    @classmethod
    def appendix_c1(cls, seed: int = 0, **kw) -> "DgpConfig":
        """3000 students, capacities (750, 700, 750), all coefficients 1
        except the demand-shifter coefficient -1."""
        return cls(seed=seed, **kw)

    @classmethod
    def reduced(cls, seed: int = 0, **kw) -> "DgpConfig":
        """z enters only college 1's student utility and college 3's
        evaluation of students."""
        return cls(seed=seed, beta_z=(1.0, 0.0, 0.0), gamma_z=(0.0, 0.0, 1.0), **kw)

    def with_seed(self, seed: int) -> "DgpConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def truth(self) -> np.ndarray:
        """True parameter vector in :func:`index_model` order."""
        C = self.n_colleges
        beta = np.column_stack([self.beta_d, self.beta_s, self.beta_z]).ravel()
        gamma = np.column_stack([self.gamma_w, self.gamma_m, self.gamma_z]).ravel()
        return np.concatenate([beta, gamma, [self.sigma_eps[C - 1]]])


def index_model(market: Market, free_sigma=None) -> IndexModel:
    """Per-college coefficients on (d, s, z) for students and (w, m, z) for
    colleges. ``free_sigma`` lists the college positions whose student-shock
    sd is estimated (default: the last college)."""
    n, C = market.n_students, market.n_colleges
    if free_sigma is None:
        free_sigma = (C - 1,)
    zcol = {k: market.z[:, market.z_names.index(k)] for k in Z_NAMES}
    X = np.zeros((n, C, 3 * C))
    Z = np.zeros((n, C, 3 * C))
    snames, cnames = [], []
    for c in range(C):
        X[:, c, 3 * c] = market.y[:, c]
        X[:, c, 3 * c + 1] = zcol["s"]
        X[:, c, 3 * c + 2] = zcol["z"]
        Z[:, c, 3 * c] = market.w[:, c]
        Z[:, c, 3 * c + 1] = zcol["m"]
        Z[:, c, 3 * c + 2] = zcol["z"]
        snames += [f"beta_d_{c + 1}", f"beta_s_{c + 1}", f"beta_z_{c + 1}"]
        cnames += [f"gamma_w_{c + 1}", f"gamma_m_{c + 1}", f"gamma_z_{c + 1}"]
    groups = np.zeros(C, dtype=np.int64)
    for g, c in enumerate(free_sigma):
        groups[c] = g + 1
    return IndexModel(
        student_X=X, college_X=Z, student_names=tuple(snames), college_names=tuple(cnames),
        sigma_group=groups, sigma_free=np.array([False] + [True] * len(free_sigma)),
        sigma_names=tuple(f"sigma_eps_{c + 1}" for c in free_sigma),
    )


@dataclass(eq=False)
class Simulation:
    config: DgpConfig
    market: Market
    utilities: LatentUtilities
    matching: Matching
    truth: np.ndarray
    nonbinding: tuple[int, ...] = ()

    def __iter__(self):
        return iter((self.market, self.utilities, self.matching))

    @property
    def model(self) -> IndexModel:
        return index_model(self.market)


def draw_covariates(config: DgpConfig, rng: np.random.Generator) -> Market:
    n, C = config.n_students, config.n_colleges

    def draw(name, shape):
        mean, var = config.covariates[name]
        return mean + np.sqrt(var) * rng.standard_normal(shape)

    d = draw("d", (n, C))
    w = draw("w", (n, C))
    s, z, m = draw("s", n), draw("z", n), draw("m", n)
    return Market(y=d, w=w, z=np.column_stack([s, z, m]), capacities=np.array(config.capacities),
                  z_names=Z_NAMES)


def simulate_market(config: DgpConfig) -> Simulation:
    """Draw covariates and shocks from ``config.seed`` and compute the
    student-optimal stable matching.

    A college whose capacity does not bind is reported in ``nonbinding``
    (and warned about): its preferences are not identified.
    """
    config.validate()
    cov_rng, eps_rng, eta_rng = substreams(config.seed)
    market = draw_covariates(config, cov_rng)
    n, C = market.n_students, market.n_colleges
    eps = eps_rng.standard_normal((n, C + 1))
    eta = eta_rng.standard_normal((C, n))
    truth = config.truth()
    model = index_model(market)
    beta, gamma, _ = model.split(truth)
    u = eps.copy()
    u[:, 1:] = model.student_mean(beta) + np.asarray(config.sigma_eps) * eps[:, 1:]
    v = model.college_mean(gamma) + eta
    utilities = LatentUtilities(u, v)
    matching = deferred_acceptance(market, utilities)
    nonbinding = tuple(int(c) for c in np.flatnonzero(~matching.binding(market.capacities)))
    if nonbinding:
        warnings.warn(f"capacity not binding for colleges {[c + 1 for c in nonbinding]}",
                      stacklevel=2)
    return Simulation(config, market, utilities, matching, truth, nonbinding)
