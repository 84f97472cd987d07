"""Priority policies and counterfactual simulation.

A priority policy makes the affected colleges rank students
lexicographically: flagged students first, then the original order within
each class. It is applied to rankings, never to utility values, so a
policy that cannot reorder anyone (empty scope, nobody or everybody
flagged) reproduces the baseline matching exactly.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, SchemaError
from .market import LatentUtilities, Market, college_scores, deferred_acceptance, strict_ranks
from .model import IndexModel


@dataclass(frozen=True)
class PriorityPolicy:
    """Students tagged ``flag`` get priority at colleges in ``scope``.

    ``scope`` lists school-type names and/or college ids; ``None`` means
    every college, an empty tuple none.
    """

    flag: str
    scope: tuple | None = None

    def affected(self, market: Market) -> np.ndarray:
        if self.scope is None:
            return np.ones(market.n_colleges, dtype=bool)
        types = np.array([t.value for t in market.school_types])
        mask = np.zeros(market.n_colleges, dtype=bool)
        for s in self.scope:
            s = getattr(s, "value", s)
            if isinstance(s, str) and not s.isdigit():
                mask |= types == s
            else:
                mask |= market.college_ids == int(s)
        return mask

    def flags(self, market: Market) -> np.ndarray:
        if self.flag not in market.tags:
            raise SchemaError(f"priority flag {self.flag!r} is not a student tag")
        return market.tags[self.flag]


def apply_policy(scores: np.ndarray, flags, affected) -> np.ndarray:
    """Ranking scores (C, n) after a lexicographic priority.

    Rows of ``affected`` colleges are replaced by rank scores (higher is
    better) that put flagged students first and keep the original strict
    order within each class; other rows are returned unchanged.
    """
    scores = np.asarray(scores, dtype=float)
    flags = np.asarray(flags, dtype=bool)
    C, n = scores.shape
    if flags.shape != (n,):
        raise InvalidInput("need one flag per student")
    out = scores.copy()
    ranks = strict_ranks(scores)  # 0 = best
    for c in np.flatnonzero(affected):
        key = ranks[c] + np.where(flags, 0, n)
        out[c] = -key.astype(float)
    return out


def sorting_index(values, assignment) -> float:
    """Share of the variance of ``values`` lying between schools.

    Equal to the R^2 of a regression of ``values`` on school indicators;
    every distinct assignment code (including 0) is its own group. Returns
    NaN (with a warning) when ``values`` has no variance.
    """
    x = np.asarray(values, dtype=float)
    g = np.asarray(assignment)
    if x.shape != g.shape or x.ndim != 1:
        raise InvalidInput("values and assignment must be matching 1-d arrays")
    codes, inv = np.unique(g, return_inverse=True)
    if codes.size < 2:
        raise InvalidInput("sorting index needs at least two schools")
    dev = x - x.mean()
    total = float(dev @ dev)
    if total == 0:
        warnings.warn("sorting index undefined: values have zero variance", RuntimeWarning, stacklevel=2)
        return float("nan")
    sums = np.bincount(inv, weights=x)
    counts = np.bincount(inv)
    means = sums / counts
    between = float(counts @ (means - x.mean()) ** 2)
    return between / total


def welfare_change(utilities, counterfactual_assignment, baseline_assignment, distance_coef: float):
    """Per-student utility change in km of travel (``du / |distance_coef|``).

    ``utilities`` is the (n, C+1) student utility matrix both assignments
    were computed under.
    """
    if distance_coef == 0 or not np.isfinite(distance_coef):
        raise InvalidInput("distance coefficient must be finite and non-zero")
    u = utilities.student if isinstance(utilities, LatentUtilities) else np.asarray(utilities, float)
    rows = np.arange(u.shape[0])
    du = u[rows, np.asarray(counterfactual_assignment)] - u[rows, np.asarray(baseline_assignment)]
    return du / abs(distance_coef)


def block_indices(n_available: int, n_blocks: int = 15, block_size: int = 100) -> np.ndarray:
    """Indices of ``n_blocks`` equally spaced runs of ``block_size`` draws."""
    need = n_blocks * block_size
    if n_blocks < 1 or block_size < 1:
        raise InvalidInput("need at least one block of one draw")
    if need > n_available:
        raise InvalidInput(f"{need} draws requested, {n_available} available")
    starts = np.linspace(0, n_available - block_size, n_blocks).round().astype(int)
    return (starts[:, None] + np.arange(block_size)[None, :]).ravel()


@dataclass
class GroupWelfare:
    mean_km: float
    winners: float
    losers: float
    indifferent: float


@dataclass
class CounterfactualReport:
    """Averages over posterior draws (with across-draw sds in ``*_sd``)."""

    sorting: dict[str, tuple[float, float]]  # name -> (baseline, counterfactual)
    sorting_sd: dict[str, tuple[float, float]]
    welfare: dict[str, GroupWelfare]
    enrollment: dict[str, dict[str, tuple[float, float]]]  # group -> category -> (base, cf)
    n_draws: int
    changed: float = 0.0  # mean share of students whose match changed

    def rows(self):
        for k, (b, c) in self.sorting.items():
            sb, sc = self.sorting_sd[k]
            yield ("sorting", k, "all", b, c, sb, sc)
        for g, w in self.welfare.items():
            yield ("welfare", "mean_km", g, 0.0, w.mean_km, "", "")
            yield ("welfare", "winners", g, 0.0, w.winners, "", "")
            yield ("welfare", "losers", g, 0.0, w.losers, "", "")
            yield ("welfare", "indifferent", g, 0.0, w.indifferent, "", "")
        for g, cats in self.enrollment.items():
            for cat, (b, c) in cats.items():
                yield ("enrollment", cat, g, b, c, "", "")

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["section", "statistic", "group", "baseline", "counterfactual",
                         "baseline_sd", "counterfactual_sd"])
            for row in self.rows():
                wr.writerow([x if isinstance(x, str) else format(x, ".17g") for x in row])


def _categories(market: Market, assignment) -> np.ndarray:
    types = np.array(["none"] + [t.value for t in market.school_types], dtype=object)
    return types[np.asarray(assignment)]


def simulate_counterfactual(market: Market, model: IndexModel, draws, policy: PriorityPolicy,
                            distance_coef: str, sorting_values: dict[str, np.ndarray] | None = None,
                            n_blocks: int = 15, block_size: int = 100, seed: int = 0,
                            group_flag: str | None = None) -> CounterfactualReport:
    """Average policy effects over equally spaced posterior draws.

    For every selected draw, fresh shocks produce one set of utilities; the
    baseline and the policy matchings are both computed under it, so the
    welfare change isolates the policy. ``distance_coef`` names the
    coefficient whose absolute value converts utils into km.
    """
    draws = getattr(draws, "draws", draws)
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    if distance_coef not in model.param_names:
        raise InvalidInput(f"unknown coefficient {distance_coef!r}")
    kd = model.param_names.index(distance_coef)
    flags = policy.flags(market)
    affected = policy.affected(market)
    group = market.tags[group_flag] if group_flag else flags
    groups = {"flagged": group, "others": ~group, "all": np.ones_like(group)}
    sorting_values = sorting_values or {}
    cats = ["none"] + sorted({t.value for t in market.school_types})

    idx = block_indices(len(draws), n_blocks, block_size)
    seeds = np.random.SeedSequence(seed).spawn(idx.size)
    sort_b = {k: [] for k in sorting_values}
    sort_c = {k: [] for k in sorting_values}
    km = {g: [] for g in groups}
    enroll = {g: {c: [[], []] for c in cats} for g in groups}
    changed = []
    for j, ss in zip(idx, seeds):
        theta = draws[j]
        rng = np.random.Generator(np.random.Philox(ss))
        lu = model.draw_utilities(theta, rng, market)
        base_scores = college_scores(market, lu)
        base = deferred_acceptance(market, lu, base_scores).assignment
        cf = deferred_acceptance(market, lu, apply_policy(base_scores, flags, affected)).assignment
        changed.append(np.mean(base != cf))
        for k, vals in sorting_values.items():
            sort_b[k].append(sorting_index(vals, base))
            sort_c[k].append(sorting_index(vals, cf))
        dkm = welfare_change(lu, cf, base, theta[kd])
        cb, cc = _categories(market, base), _categories(market, cf)
        for g, mask in groups.items():
            km[g].append(dkm[mask])
            for cat in cats:
                m = mask.sum()
                enroll[g][cat][0].append(np.sum(cb[mask] == cat) / m if m else np.nan)
                enroll[g][cat][1].append(np.sum(cc[mask] == cat) / m if m else np.nan)

    welfare = {}
    for g, parts in km.items():
        allkm = np.concatenate(parts)
        if allkm.size == 0:
            welfare[g] = GroupWelfare(np.nan, np.nan, np.nan, np.nan)
            continue
        win, lose = float(np.mean(allkm > 0)), float(np.mean(allkm < 0))
        welfare[g] = GroupWelfare(float(allkm.mean()), win, lose, 1.0 - win - lose)
    return CounterfactualReport(
        sorting={k: (float(np.mean(sort_b[k])), float(np.mean(sort_c[k]))) for k in sorting_values},
        sorting_sd={k: (float(np.std(sort_b[k])), float(np.std(sort_c[k]))) for k in sorting_values},
        welfare=welfare,
        enrollment={g: {c: (float(np.mean(v[0])), float(np.mean(v[1]))) for c, v in d.items()}
                    for g, d in enroll.items()},
        n_draws=int(idx.size),
        changed=float(np.mean(changed)),
    )
