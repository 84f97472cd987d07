"""Semiparametric average-derivative estimation.

With linear indices ``r_c = y_coef * y_c + x' beta_c`` (students) and
``t_c = w_c + x' gamma_c`` (colleges), every match probability is a
function of the indices only, so the chain rule links derivatives with
respect to shared covariates to derivatives with respect to the excluded
shifters ``y`` and ``w``::

    E dsigma/ds = E[dsigma/dr] beta^s        (s enters student utility only)
    E dsigma/dm = E[dsigma/dw] gamma^m       (m enters college utility only)
    E dsigma/dz = [sum_d E dsigma/dw_d, sum_d E dsigma/dr_d] (gamma^z, beta^z)

Probabilities are estimated by Nadaraya-Watson regression of match
indicators on the covariates each system involves, gradients are the
analytic derivatives of that smoother, and averages run over the sample
minus a fraction of lowest-density points.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from .errors import EstimationError, InvalidInput, RankDeficiencyError
from .market import Market, Matching

COND_CUTOFF = 1e8


class LowDensityWarning(UserWarning):
    """An evaluation point lies where the data are thin."""


@dataclass
class KernelConfig:
    kernel: str = "gaussian-product"
    bandwidths: str | Sequence[float] = "silverman"
    trim_fraction: float = 0.05
    leave_one_out: bool = False
    scale: float = 1.0  # multiplies rule-of-thumb bandwidths
    chunk: int = 512

    def __post_init__(self):
        if self.kernel != "gaussian-product":
            raise InvalidInput(f"unsupported kernel {self.kernel!r}")
        if isinstance(self.bandwidths, str):
            if self.bandwidths != "silverman":
                raise InvalidInput(f"unknown bandwidth rule {self.bandwidths!r}")
        else:
            bw = np.asarray(self.bandwidths, dtype=float)
            if bw.ndim != 1 or not np.all(bw > 0):
                raise InvalidInput("bandwidths must be positive")
            self.bandwidths = tuple(bw.tolist())
        if not 0 <= self.trim_fraction < 0.5:
            raise InvalidInput("trim_fraction must lie in [0, 0.5)")
        if not self.scale > 0:
            raise InvalidInput("bandwidth scale must be positive")

    def resolve(self, X: np.ndarray) -> np.ndarray:
        n, d = X.shape
        if isinstance(self.bandwidths, str):
            sd = X.std(axis=0, ddof=1)
            h = (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4)) * sd
        else:
            h = np.asarray(self.bandwidths, dtype=float)
            if h.size != d:
                raise InvalidInput(f"{h.size} bandwidths for {d} regressors")
        h = h * self.scale
        if not np.all(h > 0):
            raise InvalidInput("a regressor has zero spread; bandwidth would be 0")
        return h


@dataclass(eq=False)
class KernelFit:
    """Nadaraya-Watson smoother of one-hot outcomes ``Y`` on ``X``."""

    X: np.ndarray
    Y: np.ndarray
    h: np.ndarray
    names: tuple[str, ...] = ()

    def evaluate(self, points, exclude=None, chunk: int = 512):
        """Probabilities (m, K), gradients (m, K, d) and log density (m,).

        ``exclude[j]`` drops data row ``exclude[j]`` from point ``j``'s
        smoother (leave-one-out at sample points).
        """
        P = np.atleast_2d(np.asarray(points, dtype=float))
        m, d = P.shape
        n, K = self.Y.shape
        prob = np.empty((m, K))
        grad = np.empty((m, K, d))
        logdens = np.empty(m)
        lognorm = np.log(n) + np.sum(np.log(self.h)) + 0.5 * d * np.log(2 * np.pi)
        Xs = self.X / self.h
        for lo in range(0, m, chunk):
            hi = min(m, lo + chunk)
            U = P[lo:hi, None, :] / self.h - Xs[None, :, :]  # (b, n, d)
            q = -0.5 * np.einsum("bnd,bnd->bn", U, U)
            if exclude is not None:
                ex = np.asarray(exclude[lo:hi])
                q[np.arange(hi - lo), ex] = -np.inf
            top = q.max(axis=1, keepdims=True)
            W = np.exp(q - top)
            S0 = W.sum(axis=1)
            S1 = W @ self.Y
            dW = -W[:, :, None] * U / self.h  # d/dp_k of the kernel weight
            G0 = dW.sum(axis=1)
            G1 = np.einsum("bnd,nk->bkd", dW, self.Y)
            p = S1 / S0[:, None]
            prob[lo:hi] = p
            grad[lo:hi] = G1 / S0[:, None, None] - p[:, :, None] * (G0 / S0[:, None])[:, None, :]
            logdens[lo:hi] = top[:, 0] + np.log(S0) - lognorm + (np.log(n) - np.log(n - 1) if exclude is not None else 0)
        return prob, grad, logdens


def outcome_matrix(assignment, n_colleges: int) -> np.ndarray:
    """One-hot (n, C+1) indicators; column 0 is the outside option."""
    a = np.asarray(assignment, dtype=np.int64)
    Y = np.zeros((a.size, n_colleges + 1))
    Y[np.arange(a.size), a] = 1.0
    return Y


def regressors(market: Market, names: Sequence[str]) -> np.ndarray:
    """Columns ``y<k>`` / ``w<k>`` (1-based college positions) or shared
    covariates by name."""
    cols = []
    for nm in names:
        if nm[0] in "yw" and nm[1:].isdigit():
            k = int(nm[1:]) - 1
            if not 0 <= k < market.n_colleges:
                raise InvalidInput(f"no college {k + 1} for regressor {nm!r}")
            cols.append((market.y if nm[0] == "y" else market.w)[:, k])
        elif nm in market.z_names:
            cols.append(market.z[:, market.z_names.index(nm)])
        else:
            raise InvalidInput(f"unknown regressor {nm!r}")
    return np.column_stack(cols)


def fit_kernel(market: Market, assignment, names: Sequence[str], cfg: KernelConfig) -> KernelFit:
    if market.n_students < 50:
        raise InvalidInput("kernel estimation needs at least 50 observations")
    X = regressors(market, names)
    return KernelFit(X, outcome_matrix(assignment, market.n_colleges), cfg.resolve(X), tuple(names))


@dataclass(eq=False)
class SigmaEstimate:
    prob: np.ndarray  # (C+1,)
    grad: np.ndarray  # (C+1, d)
    names: tuple[str, ...]
    log_density: float
    low_density: bool = False

    def d(self, name: str) -> np.ndarray:
        return self.grad[:, self.names.index(name)]


def estimate_sigma(market: Market, matching: Matching | np.ndarray, at, names: Sequence[str],
                   cfg: KernelConfig | None = None) -> SigmaEstimate:
    """Match probabilities ``P(mu(i) = c | x = at)`` and their gradients in
    the regressors ``names``."""
    cfg = cfg or KernelConfig()
    assignment = matching.assignment if isinstance(matching, Matching) else matching
    fit = fit_kernel(market, assignment, names, cfg)
    p, g, ld = fit.evaluate(np.asarray(at, dtype=float)[None, :])
    # the density threshold only needs a quantile: an even subsample suffices
    sub = np.unique(np.linspace(0, len(fit.X) - 1, min(len(fit.X), 2000)).round().astype(int))
    _, _, sample_ld = fit.evaluate(fit.X[sub], exclude=sub, chunk=cfg.chunk)
    at = np.asarray(at, dtype=float)
    outside = np.any(at < fit.X.min(axis=0)) or np.any(at > fit.X.max(axis=0))
    low = bool(outside or ld[0] < np.quantile(sample_ld, max(cfg.trim_fraction, 0.01)))
    if low:
        warnings.warn("evaluation point is in a low-density region of the data", LowDensityWarning,
                      stacklevel=2)
    prob = p[0] / p[0].sum()
    return SigmaEstimate(prob, g[0], tuple(names), float(ld[0]), low)


def average_gradient(fit: KernelFit, cfg: KernelConfig):
    """Trimmed mean of the smoother's gradient over the sample.

    Returns ((K, d) mean gradient, keep mask)."""
    n = len(fit.X)
    exclude = np.arange(n) if cfg.leave_one_out else None
    _, grad, ld = fit.evaluate(fit.X, exclude=exclude, chunk=cfg.chunk)
    keep = np.ones(n, dtype=bool)
    if cfg.trim_fraction > 0:
        keep = ld > np.quantile(ld, cfg.trim_fraction)
    if not keep.any():
        raise EstimationError("every point was trimmed")
    return grad[keep].mean(axis=0), keep


# ---------------------------------------------------------------------------
# systems


@dataclass(frozen=True)
class SharedVariable:
    """A covariate entering student utilities at colleges ``student_scope``
    and college utilities at ``college_scope`` (0-based positions; ``None``
    means all) with one common coefficient on each side."""

    name: str = "z"
    student_scope: tuple[int, ...] | None = None
    college_scope: tuple[int, ...] | None = None

    def scopes(self, C: int):
        s = tuple(range(C)) if self.student_scope is None else tuple(self.student_scope)
        c = tuple(range(C)) if self.college_scope is None else tuple(self.college_scope)
        return s, c


GENERAL = SharedVariable("z")
REDUCED = SharedVariable("z", student_scope=(0,), college_scope=(2,))


@dataclass(eq=False)
class DerivativeMatrices:
    """Average derivatives of the C match probabilities.

    ``d_y``/``d_s`` come from the student-side regression on (s, y),
    ``d_w``/``d_m`` from the college-side regression on (m, w), and
    ``z_lhs``/``z_rhs`` from the regression on the shared variable and the
    shifters in its scope: ``z_rhs`` holds the two columns
    ``[sum_d E dsigma/dw_d, sum_d E dsigma/dr_d]``.
    """

    d_y: np.ndarray
    d_w: np.ndarray
    d_s: np.ndarray
    d_m: np.ndarray
    z_lhs: np.ndarray
    z_rhs: np.ndarray
    y_coef: float = -1.0
    masks: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def d_z(self) -> np.ndarray:
        return self.z_lhs[:, None]

    @property
    def d_r(self) -> np.ndarray:
        """Derivatives with respect to the student indices."""
        return self.d_y / self.y_coef

    def scaled(self, k: float) -> "DerivativeMatrices":
        return DerivativeMatrices(k * self.d_y, k * self.d_w, k * self.d_s, k * self.d_m,
                                  k * self.z_lhs, k * self.z_rhs, self.y_coef, self.masks)


def average_derivatives(market: Market, matching: Matching | np.ndarray, cfg: KernelConfig | None = None,
                        student_var: str = "s", college_var: str = "m",
                        shared: SharedVariable = GENERAL, y_coef: float = -1.0) -> DerivativeMatrices:
    """Build all three systems from one market.

    ``y_coef`` is the known (normalised) coefficient on the demand shifter
    ``y``; the default -1 fits a distance-like shifter.
    """
    cfg = cfg or KernelConfig()
    assignment = matching.assignment if isinstance(matching, Matching) else matching
    C = market.n_colleges
    ys = [f"y{k + 1}" for k in range(C)]
    ws = [f"w{k + 1}" for k in range(C)]

    g, keep_s = average_gradient(fit_kernel(market, assignment, [student_var] + ys, cfg), cfg)
    d_s, d_y = g[1:, 0], g[1:, 1:]
    g, keep_m = average_gradient(fit_kernel(market, assignment, [college_var] + ws, cfg), cfg)
    d_m, d_w = g[1:, 0], g[1:, 1:]

    sy, sw = shared.scopes(C)
    names = [shared.name] + [ys[k] for k in sy] + [ws[k] for k in sw]
    g, keep_z = average_gradient(fit_kernel(market, assignment, names, cfg), cfg)
    g = g[1:]
    z_lhs = g[:, 0]
    dr = g[:, 1:1 + len(sy)].sum(axis=1) / y_coef
    dw = g[:, 1 + len(sy):].sum(axis=1)
    return DerivativeMatrices(d_y, d_w, d_s, d_m, z_lhs, np.column_stack([dw, dr]), y_coef,
                              {"student": keep_s, "college": keep_m, "shared": keep_z})


@dataclass
class RankReport:
    matrix: np.ndarray
    singular_values: np.ndarray
    condition_number: float
    passes: bool
    rank: int = 0

    def __str__(self):
        return (f"rank {self.rank}/{self.matrix.shape[1]}, condition number "
                f"{self.condition_number:.3g} ({'pass' if self.passes else 'fail'})")


def rank_report(A, cutoff: float = COND_CUTOFF) -> RankReport:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    sv = np.linalg.svd(A, compute_uv=False)
    top = sv[0] if sv.size else 0.0
    cond = float(top / sv[-1]) if sv.size and sv[-1] > 0 else np.inf
    rank = int(np.sum(sv > top / cutoff)) if top > 0 else 0
    full = min(A.shape)
    return RankReport(A, sv, cond, bool(rank == full and cond < cutoff), rank)


def _solve_square(A, b, cutoff, what):
    rep = rank_report(A, cutoff)
    if not rep.passes:
        raise RankDeficiencyError(f"{what}: {rep}", report=rep)
    return np.linalg.solve(A, b)


@dataclass
class CoefficientEstimates:
    beta_s: np.ndarray
    gamma_m: np.ndarray
    shared: dict[str, tuple[float, float]]  # variant -> (beta_z, gamma_z)

    def row(self, variant: str = "gmm") -> dict[str, float]:
        out = {f"beta_s_{k + 1}": float(b) for k, b in enumerate(self.beta_s)}
        out.update({f"gamma_m_{k + 1}": float(g) for k, g in enumerate(self.gamma_m)})
        bz, gz = self.shared[variant]
        out.update(beta_z=bz, gamma_z=gz)
        return out


def solve_coefficients(mats: DerivativeMatrices, cutoff: float = COND_CUTOFF) -> CoefficientEstimates:
    """beta^s, gamma^m from the square systems; (beta^z, gamma^z) by
    identity-weighted GMM on all rows and by every pair of rows."""
    beta_s = _solve_square(mats.d_r, mats.d_s, cutoff, "student-side system")
    gamma_m = _solve_square(mats.d_w, mats.d_m, cutoff, "college-side system")
    A, b = mats.z_rhs, mats.z_lhs
    shared = {}
    rep = rank_report(A, cutoff)
    if not rep.passes:
        raise RankDeficiencyError(f"shared-variable system: {rep}", report=rep)
    gz, bz = np.linalg.lstsq(A, b, rcond=None)[0]
    shared["gmm"] = (float(bz), float(gz))
    for rows in itertools.combinations(range(A.shape[0]), 2):
        key = ",".join(str(r + 1) for r in rows)
        try:
            gz, bz = _solve_square(A[list(rows)], b[list(rows)], cutoff, f"rows {key}")
            shared[key] = (float(bz), float(gz))
        except RankDeficiencyError:
            shared[key] = (np.nan, np.nan)
    return CoefficientEstimates(beta_s, gamma_m, shared)


# ---------------------------------------------------------------------------
# analytic model at fixed cutoffs

_GH_X, _GH_W = np.polynomial.hermite_e.hermegauss(96)
_GH_W = _GH_W / _GH_W.sum()


def _phi(x):
    return np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)


@dataclass(frozen=True)
class NormalIndexModel:
    """Independent standard-normal shocks, unit shock sds, fixed cutoffs.

    A student with indices ``r`` (students) and ``t`` (colleges) is feasible
    at ``c`` with probability ``p_c = Phi(t_c - delta_c)`` independently
    across colleges, and picks the best feasible option against an outside
    utility ``eps_0``. Then

        sigma_c = p_c E_e[ Phi(r_c + e) prod_{k != c} (1 - p_k + p_k Phi(r_c + e - r_k)) ]

    with ``e`` standard normal, computed by Gauss-Hermite quadrature.
    """

    cutoffs: tuple[float, ...]

    @property
    def n_colleges(self) -> int:
        return len(self.cutoffs)

    def feasibility(self, t):
        t = np.asarray(t, dtype=float)
        delta = np.asarray(self.cutoffs, dtype=float)
        p = np.where(np.isfinite(delta), ndtr(t - np.where(np.isfinite(delta), delta, 0.0)), 1.0)
        dp = np.where(np.isfinite(delta), _phi(t - np.where(np.isfinite(delta), delta, 0.0)), 0.0)
        return p, dp

    def probabilities(self, r, t):
        """(sigma (C+1,), dsigma/dr (C+1, C), dsigma/dt (C+1, C)) at one point."""
        r = np.asarray(r, dtype=float)
        C = self.n_colleges
        p, dp = self.feasibility(t)
        sig = np.zeros(C + 1)
        dr = np.zeros((C + 1, C))
        dt = np.zeros((C + 1, C))
        e = _GH_X
        for c in range(C):
            x = r[c] + e  # (Q,)
            base = ndtr(x)
            dbase = _phi(x)
            fac = np.ones((C, e.size))
            dfac = np.zeros((C, e.size))  # d fac_k / d(x - r_k)
            for k in range(C):
                if k == c:
                    continue
                fk = ndtr(x - r[k])
                fac[k] = 1 - p[k] + p[k] * fk
                dfac[k] = p[k] * _phi(x - r[k])
            prod = fac.prod(axis=0)
            core = base * prod
            E = _GH_W @ core
            sig[c + 1] = p[c] * E
            dt[c + 1, c] = dp[c] * E
            # derivative in r_c shifts x everywhere
            dcore = dbase * prod
            for k in range(C):
                if k == c:
                    continue
                others = np.prod(np.delete(fac, [k], axis=0), axis=0)
                term = base * dfac[k] * others
                dcore = dcore + term
                dr[c + 1, k] = -p[c] * (_GH_W @ term)
                dt[c + 1, k] = p[c] * (_GH_W @ (base * (ndtr(x - r[k]) - 1) * dp[k] * others))
            dr[c + 1, c] = p[c] * (_GH_W @ dcore)
        sig[0] = 1 - sig[1:].sum()
        dr[0] = -dr[1:].sum(axis=0)
        dt[0] = -dt[1:].sum(axis=0)
        return sig, dr, dt

    def draw_outcomes(self, r, t, rng: np.random.Generator) -> np.ndarray:
        """Simulated choices (n,) in {0..C} for index arrays r, t of shape (n, C)."""
        r, t = np.atleast_2d(r), np.atleast_2d(t)
        n, C = r.shape
        u = np.empty((n, C + 1))
        u[:, 0] = rng.standard_normal(n)
        u[:, 1:] = r + rng.standard_normal((n, C))
        v = t + rng.standard_normal((n, C))
        delta = np.asarray(self.cutoffs, dtype=float)
        u[:, 1:][v < delta] = -np.inf
        return np.argmax(u, axis=1)


@dataclass(frozen=True)
class LinearIndex:
    """Coefficients turning covariates into indices for :class:`NormalIndexModel`.

    ``r_c = y_coef * y_c + beta[c] * z``, ``t_c = w_c + gamma[c] * z``.
    """

    beta: tuple[float, ...]
    gamma: tuple[float, ...]
    y_coef: float = 1.0

    def indices(self, z, y, w):
        y, w = np.asarray(y, float), np.asarray(w, float)
        return self.y_coef * y + np.asarray(self.beta) * z, w + np.asarray(self.gamma) * z


def match_probabilities(model: NormalIndexModel, index: LinearIndex, z, y, w):
    """sigma and its derivatives with respect to z (C+1,), y and w (C+1, C)."""
    r, t = index.indices(z, y, w)
    sig, dr, dt = model.probabilities(r, t)
    dz = dr @ np.asarray(index.beta) + dt @ np.asarray(index.gamma)
    return sig, dz, dr * index.y_coef, dt


def pi_matrix(grad_fn, z, y, w1, w2) -> np.ndarray:
    """Stack [dsigma/dy, dsigma/dw] for the C colleges at w1 over the same at w2.

    ``grad_fn(z, y, w)`` returns the (C+1, C) derivative blocks (dy, dw)
    including the outside-option row, which is dropped."""
    top = np.hstack(grad_fn(z, y, w1))[1:]
    bottom = np.hstack(grad_fn(z, y, w2))[1:]
    return np.vstack([top, bottom])


def rank_condition(grad_fn, z, y, w1, w2, cutoff: float = COND_CUTOFF) -> RankReport:
    return rank_report(pi_matrix(grad_fn, z, y, w1, w2), cutoff)


def analytic_gradients(model: NormalIndexModel, index: LinearIndex):
    def fn(z, y, w):
        _, _, dy, dw = match_probabilities(model, index, z, y, w)
        return dy, dw

    return fn


def kernel_gradients(market: Market, matching, shared: str = "z", cfg: KernelConfig | None = None):
    """Gradient function backed by the kernel smoother on (z, y, w)."""
    cfg = cfg or KernelConfig()
    C = market.n_colleges
    names = [shared] + [f"y{k + 1}" for k in range(C)] + [f"w{k + 1}" for k in range(C)]
    assignment = matching.assignment if isinstance(matching, Matching) else matching
    fit = fit_kernel(market, assignment, names, cfg)

    def fn(z, y, w):
        _, g, _ = fit.evaluate(np.concatenate([[z], y, w])[None, :])
        return g[0][:, 1:1 + C], g[0][:, 1 + C:]

    return fn
