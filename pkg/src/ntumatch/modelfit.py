"""Model-fit diagnostics: how often simulated matchings reproduce the
observed one, and how far simulated partner characteristics are from the
observed ones."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput
from .market import LatentUtilities, Market, Matching, deferred_acceptance
from .model import IndexModel


def _assignments(sims) -> np.ndarray:
    rows = [s.assignment if isinstance(s, Matching) else np.asarray(s) for s in sims]
    if not rows:
        raise InvalidInput("need at least one simulation")
    return np.vstack(rows).astype(np.int64)


def _obs(observed) -> np.ndarray:
    return np.asarray(observed.assignment if isinstance(observed, Matching) else observed, dtype=np.int64)


def school_types_of(market: Market, assignment) -> np.ndarray:
    types = np.array(["none"] + [t.value for t in market.school_types], dtype=object)
    return types[np.asarray(assignment)]


def prediction_rates(simulations, observed, market: Market) -> dict[str, float]:
    """Percentages of students whose school / school type is reproduced, and
    of schools whose binding status is reproduced, averaged over
    simulations."""
    A = _assignments(simulations)
    obs = _obs(observed)
    C = market.n_colleges
    school = float(np.mean(A == obs[None, :])) * 100
    ty = school_types_of(market, A)
    type_rate = float(np.mean(ty == school_types_of(market, obs)[None, :])) * 100
    caps = market.capacities
    bind_obs = np.bincount(obs, minlength=C + 1)[1:] >= caps
    bind = np.array([np.bincount(a, minlength=C + 1)[1:] >= caps for a in A])
    binding = float(np.mean(bind == bind_obs[None, :])) * 100
    return {"pct_students_correct_school": school, "pct_students_correct_type": type_rate,
            "pct_schools_correct_binding": binding}


def _school_means(values, assignment, C):
    a = np.asarray(assignment)
    m = a > 0
    cnt = np.bincount(a[m] - 1, minlength=C)
    tot = np.bincount(a[m] - 1, weights=values[m], minlength=C)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan), cnt


def rmse_panels(simulations, observed, market: Market, student_values: dict[str, np.ndarray] | None = None,
                school_values: dict[str, np.ndarray] | None = None):
    """Panel A: RMSE over (school, simulation) of school-average student
    traits. Panel B: RMSE over (student, simulation) of the attributes of
    the matched school, for students matched in both the simulation and
    the data.

    Schools empty in the data are excluded; a school empty in one
    simulation drops that single term. Returns (panel_a, panel_b, flags)
    with ``flags`` counting skipped terms per characteristic.
    """
    A = _assignments(simulations)
    obs = _obs(observed)
    C = market.n_colleges
    M = len(A)
    panel_a, panel_b, flags = {}, {}, {}
    for name, vals in (student_values or {}).items():
        vals = np.asarray(vals, dtype=float)
        ref, cnt_obs = _school_means(vals, obs, C)
        err, skipped = [], 0
        for a in A:
            pred, cnt = _school_means(vals, a, C)
            ok = (cnt > 0) & (cnt_obs > 0)
            skipped += int(np.sum((cnt_obs > 0) & (cnt == 0)))
            err.append((pred - ref)[ok])
        e = np.concatenate(err)
        panel_a[name] = float(np.sqrt(np.mean(e ** 2))) if e.size else float("nan")
        flags[name] = skipped + int(np.sum(cnt_obs == 0)) * M
    for name, attr in (school_values or {}).items():
        attr = np.asarray(attr, dtype=float)
        if attr.shape != (C,):
            raise InvalidInput(f"school attribute {name!r} needs one value per school")
        full = np.concatenate([[np.nan], attr])
        both = (A > 0) & (obs[None, :] > 0)
        d = (full[A] - full[obs][None, :])[both]
        panel_b[name] = float(np.sqrt(np.mean(d ** 2))) if d.size else float("nan")
        flags[name] = int(np.sum(~both))
    return panel_a, panel_b, flags


def random_benchmark(market: Market, n_sims: int, seed: int = 0) -> list[Matching]:
    """Matchings when every utility on both sides is an independent N(0, 1)
    draw; capacities and gender restrictions are kept."""
    n, C = market.n_students, market.n_colleges
    out = []
    for ss in np.random.SeedSequence(seed).spawn(n_sims):
        rng = np.random.Generator(np.random.Philox(ss))
        lu = LatentUtilities(rng.standard_normal((n, C + 1)), rng.standard_normal((C, n)))
        out.append(deferred_acceptance(market, lu, scores=lu.college))
    return out


def model_simulations(market: Market, model: IndexModel, draws, n_sims: int, seed: int = 0) -> list[Matching]:
    """Matchings at ``n_sims`` posterior draws (evenly spread over the
    chain) with fresh shocks."""
    draws = np.atleast_2d(np.asarray(getattr(draws, "draws", draws), dtype=float))
    pick = np.linspace(0, len(draws) - 1, n_sims).round().astype(int)
    out = []
    for j, ss in zip(pick, np.random.SeedSequence(seed).spawn(n_sims)):
        rng = np.random.Generator(np.random.Philox(ss))
        out.append(deferred_acceptance(market, model.draw_utilities(draws[j], rng, market)))
    return out


@dataclass
class FitReport:
    rates: dict[str, float]
    rmse_students: dict[str, float]
    rmse_schools: dict[str, float]
    benchmark_rates: dict[str, float] = field(default_factory=dict)
    benchmark_students: dict[str, float] = field(default_factory=dict)
    benchmark_schools: dict[str, float] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)

    def rows(self):
        for k, v in self.rates.items():
            yield ("rates", k, v, self.benchmark_rates.get(k, np.nan))
        for k, v in self.rmse_students.items():
            yield ("rmse_school_means", k, v, self.benchmark_students.get(k, np.nan))
        for k, v in self.rmse_schools.items():
            yield ("rmse_matched_school", k, v, self.benchmark_schools.get(k, np.nan))

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["panel", "statistic", "model", "random"])
            for sec, k, a, b in self.rows():
                wr.writerow([sec, k, format(a, ".17g"), format(b, ".17g")])


def fit_report(market: Market, observed, simulations, benchmark=None, student_values=None,
               school_values=None) -> FitReport:
    rates = prediction_rates(simulations, observed, market)
    pa, pb, skipped = rmse_panels(simulations, observed, market, student_values, school_values)
    rep = FitReport(rates, pa, pb, skipped=skipped)
    if benchmark is not None:
        rep.benchmark_rates = prediction_rates(benchmark, observed, market)
        rep.benchmark_students, rep.benchmark_schools, _ = rmse_panels(
            benchmark, observed, market, student_values, school_values)
    return rep
