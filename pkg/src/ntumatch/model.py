"""Linear-index preference models.

An :class:`IndexModel` is the compiled form every estimator and simulator
works with::

    u_ic = X_ic' beta + sigma_g(c) * eps_ic      (student i, college c)
    u_i0 = eps_i0
    v_ci = Z_ic' gamma + eta_ci                 (selecting colleges only)

``X`` and ``Z`` are dense (n, C, K) arrays with zeros wherever a
coefficient does not apply to a college, so both regressions are single
pooled least-squares problems. :class:`EmpiricalSpec` is the declarative
front end that compiles to it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInput, SchemaError
from .market import LatentUtilities, Market, SchoolType


@dataclass(eq=False)
class IndexModel:
    student_X: np.ndarray
    college_X: np.ndarray
    student_names: tuple[str, ...]
    college_names: tuple[str, ...]
    sigma_group: np.ndarray
    sigma_free: np.ndarray
    sigma_names: tuple[str, ...]

    def __post_init__(self):
        self.student_X = np.asarray(self.student_X, dtype=float)
        self.college_X = np.asarray(self.college_X, dtype=float)
        n, C, _ = self.student_X.shape
        if self.college_X.shape[:2] != (n, C):
            raise InvalidInput("student and college designs disagree on (n, C)")
        if len(self.student_names) != self.student_X.shape[2]:
            raise InvalidInput("student_names length differs from student design")
        if len(self.college_names) != self.college_X.shape[2]:
            raise InvalidInput("college_names length differs from college design")
        self.sigma_group = np.asarray(self.sigma_group, dtype=np.int64)
        self.sigma_free = np.asarray(self.sigma_free, dtype=bool)
        if self.sigma_group.shape != (C,):
            raise InvalidInput("sigma_group needs one entry per college")
        if len(self.sigma_names) != int(self.sigma_free.sum()):
            raise InvalidInput("one sigma name per free sigma group")
        names = list(self.param_names)
        if len(set(names)) != len(names):
            raise InvalidInput("parameter names must be unique")

    @property
    def n_students(self) -> int:
        return self.student_X.shape[0]

    @property
    def n_colleges(self) -> int:
        return self.student_X.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.sigma_free)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(self.student_names) + tuple(self.college_names) + tuple(self.sigma_names)

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    def split(self, theta):
        """Flat vector -> (beta, gamma, per-group sd)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise InvalidInput(f"parameter vector has length {theta.size}, expected {self.n_params}")
        ks, kc = len(self.student_names), len(self.college_names)
        sd = np.ones(self.n_groups)
        sd[self.sigma_free] = theta[ks + kc:]
        return theta[:ks], theta[ks:ks + kc], sd

    def join(self, beta, gamma, sd) -> np.ndarray:
        return np.concatenate([beta, gamma, np.asarray(sd, float)[self.sigma_free]])

    def student_mean(self, beta) -> np.ndarray:
        return self.student_X @ beta

    def college_mean(self, gamma) -> np.ndarray:
        """(C, n) deterministic part of college utilities."""
        return (self.college_X @ gamma).T

    def utilities(self, theta, shocks: LatentUtilities) -> LatentUtilities:
        """Deterministic index plus scaled shocks."""
        beta, gamma, sd = self.split(theta)
        u = shocks.student.copy()
        u[:, 1:] = self.student_mean(beta) + sd[self.sigma_group] * shocks.student[:, 1:]
        v = self.college_mean(gamma) + shocks.college
        return LatentUtilities(u, v)

    def draw_utilities(self, theta, rng: np.random.Generator, market: Market | None = None):
        """Utilities with fresh standard-normal shocks; non-selecting colleges get v = 0."""
        n, C = self.n_students, self.n_colleges
        shocks = LatentUtilities(rng.standard_normal((n, C + 1)), rng.standard_normal((C, n)))
        lu = self.utilities(theta, shocks)
        if market is not None:
            lu.college[~market.selecting] = 0.0
        return lu


# ---------------------------------------------------------------------------
# declarative specs

_LOG = re.compile(r"^log\((.+)\)$")


@dataclass(frozen=True)
class Term:
    """One regressor: ``var`` (optionally times ``interact``) with its own
    coefficient ``coef``, active for colleges in ``scope``.

    ``scope`` holds school-type names and/or college ids; ``None`` means all
    colleges. Variables are looked up among student covariates (``z_names``,
    tags, ``female``/``male``), college attributes and pair variables
    (``market.pair`` plus ``y``/``w``). ``log(name)`` takes logs.
    """

    coef: str
    var: str
    interact: str | None = None
    scope: tuple | None = None


@dataclass(frozen=True)
class EmpiricalSpec:
    student_terms: tuple[Term, ...] = ()
    school_terms: tuple[Term, ...] = ()
    # each entry: (name, scope) -> a free student-shock sd for those colleges
    free_sigma: tuple[tuple[str, tuple], ...] = ()

    def __post_init__(self):
        names = [t.coef for t in self.student_terms + self.school_terms] + [s[0] for s in self.free_sigma]
        dup = {x for x in names if names.count(x) > 1}
        if dup:
            raise SchemaError(f"duplicate coefficient names: {sorted(dup)}")

    @property
    def arity(self) -> int:
        return len(self.student_terms) + len(self.school_terms) + len(self.free_sigma)

    @property
    def param_names(self) -> tuple[str, ...]:
        return (tuple(t.coef for t in self.student_terms) + tuple(t.coef for t in self.school_terms)
                + tuple(s[0] for s in self.free_sigma))


def _scope_mask(scope, market: Market) -> np.ndarray:
    C = market.n_colleges
    if scope is None:
        return np.ones(C, dtype=bool)
    mask = np.zeros(C, dtype=bool)
    types = [t.value for t in market.school_types]
    for s in scope:
        if isinstance(s, SchoolType):
            s = s.value
        if isinstance(s, str) and s in types:
            mask |= np.array([t == s for t in types])
        elif isinstance(s, (int, np.integer)) and s in market.college_ids:
            mask |= market.college_ids == s
        elif isinstance(s, str) and s.isdigit() and int(s) in market.college_ids:
            mask |= market.college_ids == int(s)
        else:
            raise SchemaError(f"unknown scope entry {s!r}")
    return mask


def variable(market: Market, name: str) -> np.ndarray:
    """Resolve a variable name to an (n, C) array (broadcast as needed)."""
    n, C = market.n_students, market.n_colleges
    m = _LOG.match(name)
    if m:
        base = variable(market, m.group(1))
        if np.any(base <= 0):
            raise SchemaError(f"log of non-positive values in {m.group(1)!r}")
        return np.log(base)
    if name == "y":
        return market.y
    if name == "w":
        return market.w
    if name in market.pair:
        return market.pair[name]
    if name in market.z_names:
        return np.repeat(market.z[:, [market.z_names.index(name)]], C, axis=1)
    if name in market.tags:
        return np.repeat(market.tags[name].astype(float)[:, None], C, axis=1)
    if name in ("female", "male") and market.gender is not None:
        code = "F" if name == "female" else "M"
        return np.repeat((market.gender == code).astype(float)[:, None], C, axis=1)
    if name in market.attribute_names:
        col = market.attributes[:, market.attribute_names.index(name)]
        return np.repeat(col[None, :], n, axis=0)
    if name == "one":
        return np.ones((n, C))
    raise SchemaError(f"unknown variable {name!r}")


def _design(terms: Sequence[Term], market: Market, allowed=None) -> np.ndarray:
    n, C = market.n_students, market.n_colleges
    X = np.zeros((n, C, len(terms)))
    for k, t in enumerate(terms):
        col = variable(market, t.var)
        if t.interact is not None:
            col = col * variable(market, t.interact)
        mask = _scope_mask(t.scope, market)
        if allowed is not None:
            mask &= allowed
        X[:, :, k] = col * mask
    return X


def compile_spec(spec: EmpiricalSpec, market: Market) -> IndexModel:
    groups = np.zeros(market.n_colleges, dtype=np.int64)
    for g, (_, scope) in enumerate(spec.free_sigma):
        mask = _scope_mask(scope, market)
        if np.any(groups[mask] != 0):
            raise SchemaError("free sigma scopes overlap")
        groups[mask] = g + 1
    return IndexModel(
        student_X=_design(spec.student_terms, market),
        college_X=_design(spec.school_terms, market, allowed=market.selecting),
        student_names=tuple(t.coef for t in spec.student_terms),
        college_names=tuple(t.coef for t in spec.school_terms),
        sigma_group=groups,
        sigma_free=np.array([False] + [True] * len(spec.free_sigma)),
        sigma_names=tuple(s[0] for s in spec.free_sigma),
    )


def build_utilities(spec: EmpiricalSpec, market: Market, params, shocks: LatentUtilities) -> LatentUtilities:
    """Evaluate the linear indices of ``spec`` at ``params`` and add ``shocks``.

    Non-selecting colleges carry no college index: their row of ``v`` is 0.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.arity,):
        raise InvalidInput(f"expected {spec.arity} coefficients, got {params.size}")
    model = compile_spec(spec, market)
    out = model.utilities(params, shocks)
    out.college[~market.selecting] = 0.0
    return out


def params_by_name(model: IndexModel | EmpiricalSpec, theta) -> dict[str, float]:
    return dict(zip(model.param_names, np.asarray(theta, dtype=float).tolist()))
