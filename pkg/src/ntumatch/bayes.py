"""Gibbs sampling with data augmentation for two-sided matching.

Each sweep:

1. College side. For every selecting college with a binding capacity,
   split the non-matched students into those who prefer ``c`` to their own
   match (``I^c``) and the rest (``I_c``), then redraw matched students'
   ``v`` above ``max v[I^c]``, reset the cutoff to the lowest matched ``v``,
   redraw ``I^c`` below the cutoff and ``I_c`` without truncation.
2. Student side. Given the cutoffs, redraw utilities for infeasible colleges
   freely, the matched college above the best feasible alternative (the
   outside option is always feasible), and other feasible colleges below
   the matched one.
3. Parameters. Conjugate normal draws of the student and college
   coefficients given the latent utilities; each free student-shock
   variance from its inverse-gamma conditional.
4. Rescaling. Multiplying every sampled student utility, ``beta`` and the
   free shock sds by one factor (and likewise each college's utilities,
   coefficients and cutoff by a factor of its own) preserves all orderings,
   hence stability.
   Drawing each factor from its exact conditional (Liu and Sabatti's
   generalised Gibbs step) leaves the posterior unchanged and removes the
   slow random walk along the utility scale.
5. Sign reflection. A Metropolis flip of the signs of one college's
   coefficients (shifting its ``v`` to match), accepted when the observed
   matching stays stable. It lets chains started with wrong signs escape.

After every sweep the observed matching is stable under the latent state.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput, RankDeficiencyError, StateCorruption
from .market import LatentUtilities, Market, Matching, audit_stability
from .model import IndexModel
from .truncnorm import rtruncnorm

log = logging.getLogger(__name__)

OUT_OF_MARKET = "out_of_market"


@dataclass
class GibbsConfig:
    iterations: int = 50_000
    burn_in: int = 20_000
    chains: int = 1
    prior_var_scale: float = 100.0
    sigma_prior: tuple[float, float] = (1.0, 2.0)  # (scale, dof)
    thin: int = 1
    seed: int = 0
    audit_every: int = 0  # 0 disables the per-sweep stability check
    checkpoint_every: int = 0
    init_dispersion: float = 0.0
    rescale: bool = True
    reflect: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInput("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise InvalidInput("burn_in must lie in [0, iterations)")
        if self.chains < 1:
            raise InvalidInput("chains must be positive")
        if not self.prior_var_scale > 0:
            raise InvalidInput("prior_var_scale must be positive")
        if self.thin < 1:
            raise InvalidInput("thin must be >= 1")
        s, nu = self.sigma_prior
        if not (s > 0 and nu > 0):
            raise InvalidInput("sigma prior needs positive scale and dof")
        self.sigma_prior = (float(s), float(nu))

    @property
    def kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass(eq=False)
class GibbsData:
    """Observed market plus the fixed pieces of the regressions."""

    market: Market
    assignment: np.ndarray
    model: IndexModel
    in_market: np.ndarray
    admissible: np.ndarray
    active: np.ndarray  # colleges whose v is sampled (selecting and binding)

    @classmethod
    def build(cls, market: Market, observed: Matching | np.ndarray, model: IndexModel) -> "GibbsData":
        assignment = np.asarray(observed.assignment if isinstance(observed, Matching) else observed,
                                dtype=np.int64)
        n, C = market.n_students, market.n_colleges
        if assignment.shape != (n,) or assignment.min() < 0 or assignment.max() > C:
            raise InvalidInput("observed assignment does not fit the market")
        if (model.n_students, model.n_colleges) != (n, C):
            raise InvalidInput("model and market disagree on (n, C)")
        counts = np.bincount(assignment, minlength=C + 1)[1:]
        if np.any(counts > market.capacities):
            raise InvalidInput("observed matching exceeds capacity")
        adm = market.admissible()
        rows = np.flatnonzero(assignment > 0)
        if not adm[rows, assignment[rows] - 1].all():
            raise InvalidInput("observed matching places students at inadmissible colleges")
        active = market.selecting & (counts == market.capacities)
        return cls(market, assignment, model, ~market.tag(OUT_OF_MARKET), adm, active)

    def __post_init__(self):
        n, C = self.market.n_students, self.market.n_colleges
        X, Z = self.model.student_X, self.model.college_X
        # student regression rows: in-market, admissible pairs
        si, sc = np.nonzero(self.in_market[:, None] & self.admissible)
        self.s_rows = (si, sc)
        self.s_X = X[si, sc]
        self.s_group = self.model.sigma_group[sc]
        self.s_XtX = [self.s_X[self.s_group == g].T @ self.s_X[self.s_group == g]
                      for g in range(self.model.n_groups)]
        self.s_count = np.bincount(self.s_group, minlength=self.model.n_groups)
        ci, cc = np.nonzero(self.admissible & self.active[None, :])
        self.c_rows = (ci, cc)
        self.c_X = Z[ci, cc]
        self.c_XtX = self.c_X.T @ self.c_X
        self.matched_masks = [self.assignment == c + 1 for c in range(C)]
        self.rows = np.arange(n)
        # college coefficients grouped by the sampled college they enter
        cols = {c: np.flatnonzero(np.any(Z[:, c] != 0, axis=0)) for c in np.flatnonzero(self.active)}
        self.sign_blocks = [b for b in cols.values() if b.size]
        # colleges linked by a shared coefficient must share a scale factor
        groups = []
        for c, b in cols.items():
            merged, rest = ([c], b), []
            for g in groups:
                if np.intersect1d(g[1], b).size:
                    merged = (merged[0] + g[0], np.union1d(merged[1], g[1]))
                else:
                    rest.append(g)
            groups = rest + [merged]
        self.scale_blocks = [(np.sort(k), b, np.flatnonzero(np.isin(cc, k))) for k, b in groups]
        _check_design(sum(self.s_XtX, np.zeros((X.shape[2],) * 2)), self.model.student_names)
        _check_design(self.c_XtX, self.model.college_names)


def _check_design(xtx, names):
    """Columns without data are left to the prior; collinear columns that
    do carry data are an error."""
    used = np.flatnonzero(np.diag(xtx) > 0)
    if used.size == 0:
        return
    sub = xtx[np.ix_(used, used)]
    sv = np.linalg.svd(sub, compute_uv=False)
    if sv[-1] <= sv[0] * used.size * np.finfo(float).eps * 10:
        raise RankDeficiencyError(
            f"design matrix is rank-deficient in {[names[k] for k in used]}", report=sv)


@dataclass(eq=False)
class GibbsState:
    latent: LatentUtilities
    theta: np.ndarray
    cutoffs: np.ndarray
    iteration: int = 0


def _student_moments(data: GibbsData, theta):
    beta, _, sd = data.model.split(theta)
    n, C = data.market.n_students, data.market.n_colleges
    mu = np.zeros((n, C + 1))
    mu[:, 1:] = data.model.student_mean(beta)
    scale = np.ones((n, C + 1))
    scale[:, 1:] = sd[data.model.sigma_group]
    return mu, scale


def _college_mean(data: GibbsData, theta):
    return data.model.college_mean(data.model.split(theta)[1])


def _feasible(data: GibbsData, v, cutoffs):
    feas = np.ones((data.market.n_students, data.market.n_colleges + 1), dtype=bool)
    feas[:, 1:] = data.admissible & (v.T >= cutoffs)
    return feas


def initial_state(data: GibbsData, theta0, rng: np.random.Generator) -> GibbsState:
    """A latent state drawn at ``theta0`` and then repaired until the
    observed matching is stable under it."""
    theta0 = np.asarray(theta0, dtype=float)
    n, C = data.market.n_students, data.market.n_colleges
    mu, scale = _student_moments(data, theta0)
    vmean = _college_mean(data, theta0)
    v = vmean + rng.standard_normal((C, n))
    v[~data.active] = 0.0
    cut = np.full(C, -np.inf)
    for c in np.flatnonzero(data.active):
        cut[c] = v[c, data.matched_masks[c]].min()
    u = mu + scale * rng.standard_normal((n, C + 1))
    own = data.assignment
    rows = data.rows
    # matched students must beat the outside option
    low = (own > 0) & (u[rows, own] <= u[:, 0])
    u[rows[low], own[low]] = rtruncnorm(mu[rows[low], own[low]], scale[rows[low], own[low]],
                                        u[low, 0], np.inf, rng)
    # Every feasible college a student prefers to their match is repaired on the
    # side that needs the smaller standardised move: the student's utility for
    # it drops below the match, or the college rejects the student. Always
    # repairing on the student side explains the matching by preferences alone
    # and leaves the college side with no truncation to learn from.
    own_u = u[rows, own]
    feas = _feasible(data, v, cut)
    for c in range(C):
        bad = feas[:, c + 1] & (own != c + 1) & (u[:, c + 1] >= own_u)
        if not bad.any():
            continue
        by_college = np.zeros(n, dtype=bool)
        if data.active[c]:
            gap_u = (u[:, c + 1] - own_u) / scale[:, c + 1]
            gap_v = v[c] - cut[c]
            by_college = bad & (gap_v < gap_u)
        i = np.flatnonzero(by_college)
        v[c, i] = rtruncnorm(vmean[c, i], 1.0, -np.inf, cut[c], rng)
        i = np.flatnonzero(bad & ~by_college)
        u[i, c + 1] = rtruncnorm(mu[i, c + 1], scale[i, c + 1], -np.inf, own_u[i], rng)
    out = ~data.in_market
    if out.any():
        # out-of-market students find only their own school acceptable
        u[out] = -1.0
        u[out, 0] = 0.0
        u[out, own[out]] = 1.0
    return GibbsState(LatentUtilities(u, v), theta0.copy(), cut)


def update_college_side(state: GibbsState, data: GibbsData, rng: np.random.Generator) -> GibbsState:
    u, v = state.latent.student, state.latent.college
    vmean = _college_mean(data, state.theta)
    own_u = u[data.rows, data.assignment]
    cut = state.cutoffs
    for c in np.flatnonzero(data.active):
        matched = data.matched_masks[c]
        if not matched.any():
            raise StateCorruption(f"binding college {c + 1} has no matched students")
        others = ~matched & data.admissible[:, c]
        prefer = others & data.in_market & (u[:, c + 1] > own_u)
        lower = v[c, prefer].max() if prefer.any() else -np.inf
        v[c, matched] = rtruncnorm(vmean[c, matched], 1.0, lower, np.inf, rng)
        cut[c] = v[c, matched].min()
        upper = np.where(prefer[others], cut[c], np.inf)
        v[c, others] = rtruncnorm(vmean[c, others], 1.0, -np.inf, upper, rng)
    return state


def update_student_side(state: GibbsState, data: GibbsData, rng: np.random.Generator) -> GibbsState:
    u, v = state.latent.student, state.latent.college
    mu, scale = _student_moments(data, state.theta)
    feas = _feasible(data, v, state.cutoffs)
    own = data.assignment
    rows = data.rows[data.in_market]
    own_r = own[rows]
    alt = np.where(feas[rows], u[rows], -np.inf)
    alt[np.arange(rows.size), own_r] = -np.inf
    lower = alt.max(axis=1)
    new_own = rtruncnorm(mu[rows, own_r], scale[rows, own_r], lower, np.inf, rng)
    u[rows, own_r] = new_own

    sub = np.zeros_like(feas, dtype=bool)
    sub[rows] = True
    sub[rows, own_r] = False
    sub[:, 1:] &= data.admissible
    upper_full = np.where(feas, u[data.rows, own][:, None], np.inf)
    u[sub] = rtruncnorm(mu[sub], scale[sub], -np.inf, upper_full[sub], rng)
    return state


def _normal_draw(precision, rhs, rng):
    try:
        L = np.linalg.cholesky(precision)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("posterior precision is not positive definite",
                                  report=np.linalg.eigvalsh(precision)) from exc
    mean = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    return mean + np.linalg.solve(L.T, rng.standard_normal(rhs.size))


def update_parameters(state: GibbsState, data: GibbsData, rng: np.random.Generator,
                      cfg: GibbsConfig) -> GibbsState:
    model = data.model
    beta, gamma, sd = model.split(state.theta)
    u, v = state.latent.student, state.latent.college
    prior_prec = 1.0 / cfg.prior_var_scale

    si, sc = data.s_rows
    resp = u[si, sc + 1]
    var = sd ** 2
    ks = beta.size
    if ks:
        prec = prior_prec * np.eye(ks)
        rhs = np.zeros(ks)
        for g in range(model.n_groups):
            if data.s_count[g]:
                m = data.s_group == g
                prec += data.s_XtX[g] / var[g]
                rhs += data.s_X[m].T @ resp[m] / var[g]
        beta = _normal_draw(prec, rhs, rng)
    s2bar, nu = cfg.sigma_prior
    resid = resp - data.s_X @ beta if ks else resp
    for g in np.flatnonzero(model.sigma_free):
        m = data.s_group == g
        ssr = float(resid[m] @ resid[m])
        var[g] = (nu * s2bar + ssr) / rng.chisquare(nu + m.sum())
    sd = np.sqrt(var)

    kc = gamma.size
    if kc and data.c_X.shape[0]:
        ci, cc = data.c_rows
        rhs = data.c_X.T @ v[cc, ci]
        gamma = _normal_draw(data.c_XtX + prior_prec * np.eye(kc), rhs, rng)
    elif kc:
        gamma = rng.standard_normal(kc) * np.sqrt(cfg.prior_var_scale)
    state.theta = model.join(beta, gamma, sd)
    return state


def _scale_factor(k, S, R, rng):
    """Draw ``a`` with density a^k exp(-a^2 S/2 - R/(2 a^2)) da/a."""
    if R <= 0:
        t = rng.gamma(0.5 * k, 2.0 / S)
    else:
        from scipy.stats import geninvgauss

        t = np.sqrt(R / S) * geninvgauss.rvs(0.5 * k, np.sqrt(R * S), random_state=rng)
    return float(np.sqrt(t))


def rescale(state: GibbsState, data: GibbsData, rng: np.random.Generator, cfg: GibbsConfig) -> GibbsState:
    model = data.model
    beta, gamma, sd = model.split(state.theta)
    u, v = state.latent.student, state.latent.college
    tau = cfg.prior_var_scale
    s2bar, nu = cfg.sigma_prior

    si, sc = data.s_rows
    fixed = ~model.sigma_free[data.s_group]
    resid = u[si, sc + 1] - data.s_X @ beta
    outside = u[data.in_market, 0]
    S = float(resid[fixed] @ resid[fixed] + outside @ outside + beta @ beta / tau)
    free = np.flatnonzero(model.sigma_free)
    n_u = outside.size + si.size
    k = n_u + beta.size - data.s_count[free].sum() - nu * free.size
    R = nu * s2bar * float(np.sum(1.0 / sd[free] ** 2))
    a = _scale_factor(k, S, R, rng)
    u[data.in_market] *= a
    beta = a * beta
    sd[free] *= a

    ci, cc = data.c_rows
    resid = v[cc, ci] - data.c_X @ gamma
    for colleges, cols, r in data.scale_blocks:
        # each college only ranks its own applicants, so its scale is free
        S = float(resid[r] @ resid[r] + gamma[cols] @ gamma[cols] / tau)
        b = _scale_factor(r.size + cols.size, S, 0.0, rng)
        v[colleges] *= b
        state.cutoffs[colleges] *= b
        gamma[cols] *= b
    state.theta = model.join(beta, gamma, sd)
    return state


def reflect_signs(state: GibbsState, data: GibbsData, rng: np.random.Generator) -> GibbsState:
    """Metropolis step flipping the signs of one college's coefficients.

    ``(gamma, v) -> (s * gamma, v + Z (s * gamma - gamma))`` for a random sign
    pattern ``s`` is its own inverse, has unit Jacobian and leaves the
    college residuals and the (symmetric) prior unchanged, so it is accepted
    exactly when the observed matching stays stable. While unmatched
    students who prefer a college keep it tight this is rejected. Once a
    wrong-signed start has emptied those sets the college side carries no
    information and coefficient updates only leave by a slow random walk;
    the reflection lets them jump.
    """
    model = data.model
    beta, gamma, sd = model.split(state.theta)
    u, v = state.latent.student, state.latent.college
    own_u = u[data.rows, data.assignment]
    for cols in data.sign_blocks:
        s = rng.choice(np.array([-1.0, 1.0]), size=cols.size)
        if np.all(s > 0):
            continue
        delta = np.zeros_like(gamma)
        delta[cols] = (s - 1) * gamma[cols]
        dv = model.college_mean(delta)
        touched = np.flatnonzero(data.active & np.any(dv != 0, axis=1))
        new_v = v[touched] + dv[touched]
        new_cut = np.array([new_v[j, data.matched_masks[c]].min() for j, c in enumerate(touched)])
        ok = True
        for j, c in enumerate(touched):
            feas = data.admissible[:, c] & ~data.matched_masks[c] & (new_v[j] >= new_cut[j])
            if np.any(feas & (u[:, c + 1] >= own_u)):
                ok = False
                break
        if ok:
            v[touched] = new_v
            state.cutoffs[touched] = new_cut
            gamma[cols] *= s
    state.theta = model.join(beta, gamma, sd)
    return state


def sweep(state: GibbsState, data: GibbsData, rng: np.random.Generator, cfg: GibbsConfig) -> GibbsState:
    update_college_side(state, data, rng)
    update_student_side(state, data, rng)
    update_parameters(state, data, rng, cfg)
    if cfg.rescale:
        rescale(state, data, rng, cfg)
    if cfg.reflect:
        reflect_signs(state, data, rng)
    state.iteration += 1
    return state


def audit_state(state: GibbsState, data: GibbsData) -> int:
    """Number of blocking pairs plus IR violations of the observed matching
    under the current latent utilities."""
    a = audit_stability(data.market, state.latent, data.assignment, limit=0)
    return a.n_blocking + len(a.ir_violations) + len(a.capacity_violations)


# ---------------------------------------------------------------------------
# chains


@dataclass(eq=False)
class PosteriorChain:
    draws: np.ndarray
    names: tuple[str, ...]
    iterations: int
    burn_in: int
    thin: int
    seed: int
    chain_id: int
    audits: list[tuple[int, int]] = field(default_factory=list)  # (iteration, violations)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)

    @property
    def mean(self) -> np.ndarray:
        return self.draws.mean(axis=0)

    @property
    def sd(self) -> np.ndarray:
        return self.draws.std(axis=0, ddof=1) if len(self.draws) > 1 else np.zeros(len(self.names))

    @property
    def stability_violations(self) -> int:
        return sum(v for _, v in self.audits)

    def summary(self) -> dict[str, tuple[float, float]]:
        return {k: (float(m), float(s)) for k, m, s in zip(self.names, self.mean, self.sd)}


def chain_rng(seed: int, chain_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, chain_id])))


def default_start(model: IndexModel) -> np.ndarray:
    """Zero coefficients, unit shock sds."""
    return model.join(np.zeros(len(model.student_names)), np.zeros(len(model.college_names)),
                      np.ones(model.n_groups))


def run_chain(market: Market, observed: Matching | np.ndarray, model: IndexModel, cfg: GibbsConfig,
              chain_id: int = 0, theta0=None, checkpoint: str | Path | None = None,
              resume: str | Path | None = None, progress=None) -> PosteriorChain:
    """Run one chain; deterministic given ``(cfg.seed, chain_id)``.

    ``checkpoint`` names a ``.npz`` written every ``cfg.checkpoint_every``
    sweeps; ``resume`` restarts from such a file and continues the same
    random stream, so a resumed run reproduces an uninterrupted one.
    """
    data = GibbsData.build(market, observed, model)
    if resume is not None:
        state, rng, draws, audits = load_checkpoint(resume, market.n_students, market.n_colleges)
    else:
        rng = chain_rng(cfg.seed, chain_id)
        if theta0 is None:
            theta0 = default_start(model)
            if cfg.init_dispersion > 0:
                beta, gamma, sd = model.split(theta0)
                beta = beta + cfg.init_dispersion * rng.standard_normal(beta.size)
                gamma = gamma + cfg.init_dispersion * rng.standard_normal(gamma.size)
                sd = sd * np.exp(0.5 * cfg.init_dispersion * rng.standard_normal(sd.size))
                theta0 = model.join(beta, gamma, sd)
        state = initial_state(data, theta0, rng)
        draws, audits = [], []
        if cfg.audit_every:
            audits.append((0, audit_state(state, data)))
    while state.iteration < cfg.iterations:
        sweep(state, data, rng, cfg)
        it = state.iteration
        if it > cfg.burn_in and (it - 1 - cfg.burn_in) % cfg.thin == 0:
            draws.append(state.theta.copy())
        if cfg.audit_every and it % cfg.audit_every == 0:
            bad = audit_state(state, data)
            audits.append((it, bad))
            if bad:
                log.warning("sweep %d: %d stability violations", it, bad)
        if checkpoint is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint, state, rng, draws, audits)
        if progress is not None:
            progress(it)
    return PosteriorChain(np.array(draws).reshape(-1, model.n_params), model.param_names,
                          cfg.iterations, cfg.burn_in, cfg.thin, cfg.seed, chain_id, audits)


def run_chains(market, observed, model, cfg: GibbsConfig, starts=None, workers: int | None = None):
    """``cfg.chains`` independent chains (processes when ``workers > 1``)."""
    starts = starts if starts is not None else [None] * cfg.chains
    if workers and workers > 1 and cfg.chains > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(run_chain, market, observed, model, cfg, k, starts[k])
                    for k in range(cfg.chains)]
            return [f.result() for f in futs]
    return [run_chain(market, observed, model, cfg, k, starts[k]) for k in range(cfg.chains)]


# ---------------------------------------------------------------------------
# checkpoints


def _rng_state_json(rng: np.random.Generator) -> str:
    def conv(x):
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        if isinstance(x, np.ndarray):
            return {"__array__": x.tolist(), "dtype": str(x.dtype)}
        if isinstance(x, np.integer):
            return int(x)
        return x

    return json.dumps(conv(rng.bit_generator.state))


def _rng_from_json(text: str) -> np.random.Generator:
    def conv(x):
        if isinstance(x, dict):
            if "__array__" in x:
                return np.array(x["__array__"], dtype=x["dtype"])
            return {k: conv(v) for k, v in x.items()}
        return x

    st = conv(json.loads(text))
    bg = getattr(np.random, st["bit_generator"])()
    bg.state = st
    return np.random.Generator(bg)


def save_checkpoint(path, state: GibbsState, rng, draws, audits):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.npz")
    np.savez(tmp, student=state.latent.student, college=state.latent.college, theta=state.theta,
             cutoffs=state.cutoffs, iteration=state.iteration,
             draws=np.array(draws).reshape(len(draws), state.theta.size),
             audits=np.array(audits, dtype=np.int64).reshape(-1, 2),
             rng=np.array(_rng_state_json(rng)))
    tmp.replace(path)


def load_checkpoint(path, n=None, C=None):
    with np.load(path) as f:
        latent = LatentUtilities(f["student"], f["college"])
        if n is not None and latent.student.shape != (n, C + 1):
            raise InvalidInput("checkpoint does not match the market")
        state = GibbsState(latent, f["theta"], f["cutoffs"], int(f["iteration"]))
        draws = [row for row in f["draws"]]
        audits = [tuple(int(x) for x in r) for r in f["audits"]]
        rng = _rng_from_json(str(f["rng"]))
    return state, rng, draws, audits


def write_chain_csv(path, chain: PosteriorChain):
    """Kept draws, one row per stored iteration, 17 significant digits."""
    its = range(chain.burn_in + 1, chain.iterations + 1, chain.thin)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(("iteration",) + tuple(chain.names)) + "\n")
        for it, row in zip(its, chain.draws):
            fh.write(",".join([str(it)] + [format(x, ".17g") for x in row]) + "\n")


def read_chain_csv(path) -> tuple[np.ndarray, tuple[str, ...], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    arr = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return arr[:, 1:], tuple(header[1:]), arr[:, 0].astype(np.int64)
