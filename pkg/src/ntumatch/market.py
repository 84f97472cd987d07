"""Many-to-one matching markets without transfers.

Markets are stored column-wise as numpy arrays. Colleges are addressed by
position ``c = 0..C-1`` inside arrays; in an assignment vector the value
``c + 1`` means "matched with college c" and ``0`` is the outside option.
External ids (``student_ids`` / ``college_ids``) only matter for I/O.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidInput

NEG_INF = float("-inf")
OUTSIDE = 0


class SchoolType(str, Enum):
    PUBLIC = "public"
    SELECTIVE_A = "selective-a"
    SELECTIVE_B = "selective-b"

    @property
    def selects(self) -> bool:
        return self is not SchoolType.PUBLIC


@dataclass
class StudentRecord:
    id: int
    y: Sequence[float]
    w: Sequence[float]
    z: Sequence[float]
    gender: str | None = None
    tags: frozenset[str] = frozenset()


@dataclass
class CollegeRecord:
    id: int
    capacity: int
    school_type: SchoolType = SchoolType.SELECTIVE_A
    attributes: Sequence[float] = ()
    gender_restriction: str | None = None


def _as_matrix(a, name, shape=None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and shape is not None and len(shape) == 2:
        a = a.reshape(-1, 1) if shape[1] == 1 else a
    if shape is not None and a.shape != shape:
        raise InvalidInput(f"{name} has shape {a.shape}, expected {shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return a


@dataclass(eq=False)
class Market:
    """One market instance.

    ``y``/``w`` are the (n, C) demand and supply shifters, ``z`` the (n, d_z)
    shared covariates. Optional extras: per-student ``gender`` codes with
    per-college ``college_gender`` restrictions, boolean ``tags`` (e.g.
    ``low_income``, ``out_of_market``), college ``attributes``, further
    pair-specific variables in ``pair`` and a ``lottery`` used to order
    applicants at non-selecting colleges.
    """

    y: np.ndarray
    w: np.ndarray
    z: np.ndarray
    capacities: np.ndarray
    school_types: tuple[SchoolType, ...] | None = None
    z_names: tuple[str, ...] | None = None
    student_ids: np.ndarray | None = None
    college_ids: np.ndarray | None = None
    gender: np.ndarray | None = None
    college_gender: tuple[str | None, ...] | None = None
    tags: dict[str, np.ndarray] = field(default_factory=dict)
    attributes: np.ndarray | None = None
    attribute_names: tuple[str, ...] = ()
    pair: dict[str, np.ndarray] = field(default_factory=dict)
    lottery: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.atleast_2d(_as_matrix(self.y, "y"))
        n, C = self.y.shape
        self.w = _as_matrix(self.w, "w", (n, C))
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z.reshape(n, -1) if z.size else np.zeros((n, 0))
        self.z = _as_matrix(z, "z", (n, z.shape[1]))
        caps = np.asarray(self.capacities)
        if caps.shape != (C,):
            raise InvalidInput(f"capacities has shape {caps.shape}, expected ({C},)")
        if np.any(caps != np.round(caps)) or np.any(caps < 1):
            raise InvalidInput("capacities must be positive integers")
        self.capacities = caps.astype(np.int64)
        if self.school_types is None:
            self.school_types = (SchoolType.SELECTIVE_A,) * C
        self.school_types = tuple(SchoolType(t) for t in self.school_types)
        if len(self.school_types) != C:
            raise InvalidInput("school_types length differs from number of colleges")
        if self.z_names is None:
            self.z_names = tuple(f"z{k + 1}" for k in range(self.z.shape[1]))
        self.z_names = tuple(self.z_names)
        if len(self.z_names) != self.z.shape[1]:
            raise InvalidInput("z_names length differs from z columns")
        self.student_ids = _ids(self.student_ids, n, "student_ids")
        self.college_ids = _ids(self.college_ids, C, "college_ids")
        if self.gender is not None:
            self.gender = np.asarray(self.gender, dtype=object)
            if self.gender.shape != (n,):
                raise InvalidInput("gender must have one entry per student")
        if self.college_gender is None:
            self.college_gender = (None,) * C
        self.college_gender = tuple(self.college_gender)
        if len(self.college_gender) != C:
            raise InvalidInput("college_gender length differs from number of colleges")
        if any(g is not None for g in self.college_gender) and self.gender is None:
            raise InvalidInput("gender-restricted colleges need student gender")
        self.tags = {k: np.asarray(v, dtype=bool) for k, v in self.tags.items()}
        for k, v in self.tags.items():
            if v.shape != (n,):
                raise InvalidInput(f"tag {k!r} must have one entry per student")
        if self.attributes is None:
            self.attributes = np.zeros((C, 0))
        self.attributes = _as_matrix(np.asarray(self.attributes, dtype=float).reshape(C, -1),
                                     "attributes")
        self.attribute_names = tuple(self.attribute_names)
        if len(self.attribute_names) != self.attributes.shape[1]:
            raise InvalidInput("attribute_names length differs from attribute columns")
        self.pair = {k: _as_matrix(v, f"pair[{k!r}]", (n, C)) for k, v in self.pair.items()}
        if self.lottery is not None:
            self.lottery = _as_matrix(self.lottery, "lottery", (n,))

    @classmethod
    def from_records(cls, students: Sequence[StudentRecord], colleges: Sequence[CollegeRecord],
                     z_names=None, attribute_names=(), **kw) -> "Market":
        C = len(colleges)
        ys = np.array([s.y for s in students], dtype=float).reshape(len(students), C)
        ws = np.array([s.w for s in students], dtype=float).reshape(len(students), C)
        dz = len(students[0].z) if students else 0
        zs = np.array([s.z for s in students], dtype=float).reshape(len(students), dz)
        if any(len(s.z) != dz for s in students):
            raise InvalidInput("students disagree on z dimension")
        genders = [s.gender for s in students]
        tag_names = sorted(set().union(*(s.tags for s in students))) if students else []
        tags = {t: np.array([t in s.tags for s in students]) for t in tag_names}
        return cls(
            y=ys, w=ws, z=zs,
            capacities=np.array([c.capacity for c in colleges]),
            school_types=tuple(c.school_type for c in colleges),
            z_names=z_names,
            student_ids=np.array([s.id for s in students]),
            college_ids=np.array([c.id for c in colleges]),
            gender=None if all(g is None for g in genders) else np.array(genders, dtype=object),
            college_gender=tuple(c.gender_restriction for c in colleges),
            tags=tags,
            attributes=np.array([list(c.attributes) for c in colleges], dtype=float).reshape(C, -1),
            attribute_names=attribute_names,
            **kw,
        )

    @property
    def n_students(self) -> int:
        return self.y.shape[0]

    @property
    def n_colleges(self) -> int:
        return self.y.shape[1]

    @property
    def excess_demand(self) -> bool:
        """True when total capacity is strictly below the number of students."""
        return int(self.capacities.sum()) < self.n_students

    @property
    def selecting(self) -> np.ndarray:
        return np.array([t.selects for t in self.school_types])

    def admissible(self) -> np.ndarray:
        """(n, C) mask of pairs allowed by gender restrictions."""
        n, C = self.n_students, self.n_colleges
        out = np.ones((n, C), dtype=bool)
        for c, g in enumerate(self.college_gender):
            if g is not None:
                out[:, c] = self.gender == g
        return out

    def tag(self, name: str) -> np.ndarray:
        if name not in self.tags:
            return np.zeros(self.n_students, dtype=bool)
        return self.tags[name]

    def subset(self, idx) -> "Market":
        """Market restricted to the students in ``idx`` (capacities kept)."""
        idx = np.asarray(idx)
        return Market(
            y=self.y[idx], w=self.w[idx], z=self.z[idx], capacities=self.capacities,
            school_types=self.school_types, z_names=self.z_names,
            student_ids=self.student_ids[idx], college_ids=self.college_ids,
            gender=None if self.gender is None else self.gender[idx],
            college_gender=self.college_gender,
            tags={k: v[idx] for k, v in self.tags.items()},
            attributes=self.attributes, attribute_names=self.attribute_names,
            pair={k: v[idx] for k, v in self.pair.items()},
            lottery=None if self.lottery is None else self.lottery[idx],
        )


def _ids(ids, size, name):
    if ids is None:
        return np.arange(1, size + 1)
    ids = np.asarray(ids)
    if ids.shape != (size,):
        raise InvalidInput(f"{name} must have length {size}")
    if np.any(ids <= 0) or len(np.unique(ids)) != size:
        raise InvalidInput(f"{name} must be distinct positive integers")
    return ids.astype(np.int64)


@dataclass(eq=False)
class LatentUtilities:
    """Student utilities ``student`` (n, C+1), column 0 the outside option,
    and college utilities ``college`` (C, n)."""

    student: np.ndarray
    college: np.ndarray

    def __post_init__(self):
        self.student = np.asarray(self.student, dtype=float)
        self.college = np.asarray(self.college, dtype=float)
        if self.student.ndim != 2 or self.college.ndim != 2:
            raise InvalidInput("utilities must be 2-d arrays")
        n, C1 = self.student.shape
        if self.college.shape != (C1 - 1, n):
            raise InvalidInput(
                f"college utilities have shape {self.college.shape}, expected {(C1 - 1, n)}")
        if np.isnan(self.student).any() or np.isnan(self.college).any():
            raise InvalidInput("utilities contain NaN")

    def copy(self) -> "LatentUtilities":
        return LatentUtilities(self.student.copy(), self.college.copy())


@dataclass(eq=False)
class Matching:
    """Assignment vector (0 = outside option, c+1 = college c) and cutoffs."""

    assignment: np.ndarray
    cutoffs: np.ndarray

    def counts(self, n_colleges: int) -> np.ndarray:
        return np.bincount(self.assignment, minlength=n_colleges + 1)[1:]

    def binding(self, capacities) -> np.ndarray:
        return self.counts(len(capacities)) >= np.asarray(capacities)

    def __eq__(self, other):
        if not isinstance(other, Matching):
            return NotImplemented
        return (np.array_equal(self.assignment, other.assignment)
                and np.array_equal(self.cutoffs, other.cutoffs))


def _check(market: Market, utilities: LatentUtilities):
    n, C = market.n_students, market.n_colleges
    if utilities.student.shape != (n, C + 1):
        raise InvalidInput(
            f"student utilities have shape {utilities.student.shape}, expected {(n, C + 1)}")
    if not (np.all(np.isfinite(utilities.student)) and np.all(np.isfinite(utilities.college))):
        raise InvalidInput("utilities must be finite")


def college_scores(market: Market, utilities: LatentUtilities) -> np.ndarray:
    """(C, n) ranking scores: ``v`` for selecting colleges, the market lottery
    (or zeros, i.e. id order) for non-selecting ones."""
    scores = utilities.college.copy()
    sel = market.selecting
    if not sel.all():
        lot = market.lottery if market.lottery is not None else np.zeros(market.n_students)
        scores[~sel] = lot
    return scores


def strict_ranks(scores: np.ndarray) -> np.ndarray:
    """Rank students per college, 0 = best; equal scores go to the lower index."""
    C, n = scores.shape
    ranks = np.empty((C, n), dtype=np.int64)
    idx = np.arange(n)
    for c in range(C):
        order = np.lexsort((idx, -scores[c]))
        ranks[c, order] = idx
    return ranks


def deferred_acceptance(market: Market, utilities: LatentUtilities,
                        scores: np.ndarray | None = None) -> Matching:
    """Student-proposing deferred acceptance.

    Colleges rank applicants by ``scores`` (default :func:`college_scores`);
    exact ties go to the lower student index, ties in student utilities to
    the lower college index. A college is acceptable to a student only if
    its utility strictly exceeds the outside option.
    """
    _check(market, utilities)
    if scores is None:
        scores = college_scores(market, utilities)
    n, C = market.n_students, market.n_colleges
    u = utilities.student
    acceptable = (u[:, 1:] > u[:, :1]) & market.admissible()
    prefs = np.argsort(-u[:, 1:], axis=1, kind="stable")
    ranks = strict_ranks(scores).tolist()
    caps = market.capacities.tolist()

    pref_lists = [[c for c in row if acc[c]] for row, acc in zip(prefs.tolist(), acceptable.tolist())]
    nxt = [0] * n
    assign = [0] * n
    held: list[list[tuple[int, int]]] = [[] for _ in range(C)]
    free = list(range(n - 1, -1, -1))
    while free:
        i = free.pop()
        plist = pref_lists[i]
        while nxt[i] < len(plist):
            c = plist[nxt[i]]
            nxt[i] += 1
            r = ranks[c][i]
            h = held[c]
            if len(h) < caps[c]:
                heapq.heappush(h, (-r, i))
                assign[i] = c + 1
                break
            if -h[0][0] > r:
                _, j = heapq.heapreplace(h, (-r, i))
                assign[i] = c + 1
                assign[j] = 0
                free.append(j)
                break
    assignment = np.array(assign, dtype=np.int64)
    return Matching(assignment, compute_cutoffs(assignment, market, scores=scores))


def compute_cutoffs(assignment, market: Market, utilities: LatentUtilities | None = None,
                    scores: np.ndarray | None = None) -> np.ndarray:
    """Lowest matched score at full colleges, ``-inf`` elsewhere."""
    if scores is None:
        if utilities is None:
            raise InvalidInput("need utilities or scores")
        scores = college_scores(market, utilities)
    assignment = np.asarray(assignment)
    C = market.n_colleges
    counts = np.bincount(assignment, minlength=C + 1)[1:]
    if np.any(counts > market.capacities):
        raise InvalidInput("assignment exceeds capacity")
    cut = np.full(C, NEG_INF)
    for c in np.flatnonzero(counts == market.capacities):
        cut[c] = scores[c, assignment == c + 1].min()
    return cut


def feasible_matrix(cutoffs, scores: np.ndarray, market: Market) -> np.ndarray:
    """(n, C+1) feasibility mask; column 0 (outside option) always True."""
    cutoffs = np.asarray(cutoffs, dtype=float)
    n = market.n_students
    out = np.ones((n, market.n_colleges + 1), dtype=bool)
    out[:, 1:] = (scores.T >= cutoffs) & market.admissible()
    return out


def feasible_set(student: int, cutoffs, utilities: LatentUtilities, market: Market) -> set[int]:
    """Colleges (as ``c + 1``) plus the outside option ``0`` feasible to ``student``."""
    scores = college_scores(market, utilities)[:, student]
    adm = market.admissible()[student]
    return {0} | {c + 1 for c in range(market.n_colleges) if adm[c] and scores[c] >= cutoffs[c]}


@dataclass(frozen=True)
class BlockingPair:
    student: int
    college: int  # position c, not c + 1
    reason: str  # "excess-capacity" or "displaces"
    displaced: int | None = None


@dataclass
class StabilityAudit:
    blocking_pairs: list[BlockingPair]
    ir_violations: list[int]
    capacity_violations: list[int]
    non_generic: bool = False
    n_blocking: int | None = None

    def __post_init__(self):
        if self.n_blocking is None:
            self.n_blocking = len(self.blocking_pairs)

    @property
    def stable(self) -> bool:
        return not (self.n_blocking or self.ir_violations or self.capacity_violations)

    def summary(self) -> str:
        return (f"{self.n_blocking} blocking pairs, "
                f"{len(self.ir_violations)} IR violations, "
                f"{len(self.capacity_violations)} over-capacity colleges"
                + (" (non-generic ties)" if self.non_generic else ""))


def has_ties(utilities: LatentUtilities, market: Market, scores=None) -> bool:
    """Exact ties among a student's utilities or a selecting college's scores."""
    u = np.sort(utilities.student, axis=1)
    if np.any(np.diff(u, axis=1) == 0):
        return True
    if scores is None:
        scores = college_scores(market, utilities)
    s = np.sort(scores[market.selecting], axis=1)
    return bool(np.any(np.diff(s, axis=1) == 0))


def audit_stability(market: Market, utilities: LatentUtilities, matching: Matching | np.ndarray,
                    scores: np.ndarray | None = None, limit: int | None = None) -> StabilityAudit:
    """Exhaustive scan for blocking pairs and individual-rationality failures.

    ``limit`` caps the number of blocking pairs materialised (the scan itself
    is always complete; a positive count is all a caller needs for a
    pass/fail).
    """
    _check(market, utilities)
    assignment = matching.assignment if isinstance(matching, Matching) else np.asarray(matching)
    if scores is None:
        scores = college_scores(market, utilities)
    n, C = market.n_students, market.n_colleges
    u = utilities.student
    rows = np.arange(n)
    u_own = u[rows, assignment]
    counts = np.bincount(assignment, minlength=C + 1)[1:]
    over = [int(c) for c in np.flatnonzero(counts > market.capacities)]

    matched = assignment > 0
    ir = [int(i) for i in np.flatnonzero(matched & ~(u_own > u[:, 0]))]
    inadmissible = matched & ~market.admissible()[rows, np.maximum(assignment - 1, 0)]
    ir += [int(i) for i in np.flatnonzero(inadmissible)]

    worst = np.full(C, np.inf)
    worst_who = np.full(C, -1)
    for c in range(C):
        members = np.flatnonzero(assignment == c + 1)
        if members.size:
            k = np.argmin(scores[c, members])
            worst[c], worst_who[c] = scores[c, members[k]], members[k]
    slack = counts < market.capacities
    wants = (u[:, 1:] > u_own[:, None]) & market.admissible()
    wants[rows[matched], assignment[matched] - 1] = False
    block = wants & (slack[None, :] | (scores.T > worst[None, :]))
    pairs = []
    for i, c in zip(*np.nonzero(block)):
        if limit is not None and len(pairs) >= limit:
            break
        if slack[c]:
            pairs.append(BlockingPair(int(i), int(c), "excess-capacity"))
        else:
            pairs.append(BlockingPair(int(i), int(c), "displaces", int(worst_who[c])))
    return StabilityAudit(pairs, sorted(set(ir)), over, has_ties(utilities, market, scores),
                          n_blocking=int(block.sum()))


@dataclass
class CutoffAllocation:
    matching: Matching
    clears: bool
    demand: np.ndarray


def stable_from_cutoffs(market: Market, utilities: LatentUtilities, cutoffs,
                        scores: np.ndarray | None = None) -> CutoffAllocation:
    """Give every student their best feasible option at the given cutoffs.

    ``clears`` is True when no college is over-demanded and every college
    with a finite (or ``+inf``) cutoff fills exactly.
    """
    _check(market, utilities)
    cutoffs = np.asarray(cutoffs, dtype=float)
    if cutoffs.shape != (market.n_colleges,) or np.isnan(cutoffs).any():
        raise InvalidInput("cutoffs must be a length-C vector without NaN")
    if scores is None:
        scores = college_scores(market, utilities)
    feas = feasible_matrix(cutoffs, scores, market)
    masked = np.where(feas, utilities.student, -np.inf)
    # column 0 first, so exact ties with the outside option leave students unmatched
    assignment = np.argmax(masked, axis=1).astype(np.int64)
    demand = np.bincount(assignment, minlength=market.n_colleges + 1)[1:]
    must_fill = cutoffs > NEG_INF
    clears = bool(np.all(demand <= market.capacities)
                  and np.all(demand[must_fill] == market.capacities[must_fill]))
    return CutoffAllocation(Matching(assignment, cutoffs.copy()), clears, demand)


def assignment_sets(assignment, n_colleges: int) -> list[frozenset[int]]:
    assignment = np.asarray(assignment)
    return [frozenset(np.flatnonzero(assignment == c + 1).tolist()) for c in range(n_colleges)]


__all__ = [
    "NEG_INF", "OUTSIDE", "SchoolType", "StudentRecord", "CollegeRecord", "Market",
    "LatentUtilities", "Matching", "BlockingPair", "StabilityAudit", "CutoffAllocation",
    "college_scores", "strict_ranks", "deferred_acceptance", "compute_cutoffs",
    "feasible_matrix", "feasible_set", "audit_stability", "stable_from_cutoffs",
    "has_ties", "assignment_sets",
]
