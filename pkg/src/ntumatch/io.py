"""Reading and writing markets, latent utilities and run configurations.

Markets live in two CSV tables plus a JSON sidecar naming column roles:

* ``students.csv``: ``id``, shared covariates, ``y_1..y_C``, ``w_1..w_C``,
  ``matched_school_id`` (0 = unmatched), then optional ``gender``,
  ``lottery``, tag columns (0/1) and pair variables ``<name>_<k>``.
* ``schools.csv``: ``id``, ``type``, ``capacity``, ``gender_restriction``,
  attribute columns, and ``cutoff`` when a matching is attached.

``k`` in ``y_k`` is the school's row position in ``schools.csv``. Reals are
written with 17 significant digits so a save/load cycle is exact; an
empty cutoff is the token ``-inf``.
"""
from __future__ import annotations

import configparser
import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, SchemaError
from .market import LatentUtilities, Market, Matching, SchoolType

THREADS_ENV = "NTUMATCH_THREADS"


def fmt(x) -> str:
    """17 significant digits; infinities as ``inf`` / ``-inf``."""
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _write(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _read(path):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError as exc:
        raise SchemaError(f"file not found: {path}") from exc
    if not rows:
        raise SchemaError(f"{path} is empty")
    return rows[0], rows[1:]


def _num(text, row, col, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise SchemaError(f"cannot parse {text!r} as {kind.__name__}", row=row, column=col) from None


@dataclass
class DataSchema:
    z: list[str]
    tags: list[str] = field(default_factory=list)
    attributes: list[str] = field(default_factory=list)
    pair: list[str] = field(default_factory=list)
    gender: bool = False
    lottery: bool = False

    @classmethod
    def of(cls, market: Market) -> "DataSchema":
        return cls(list(market.z_names), sorted(market.tags), list(market.attribute_names),
                   sorted(market.pair), market.gender is not None, market.lottery is not None)

    @classmethod
    def load(cls, path) -> "DataSchema":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise SchemaError(f"file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema is not valid JSON: {exc}") from exc
        unknown = set(raw) - {"z", "tags", "attributes", "pair", "gender", "lottery"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        if "z" not in raw:
            raise SchemaError("schema must list the shared covariates under 'z'")
        return cls(**raw)

    def save(self, path):
        Path(path).write_text(json.dumps(self.__dict__, indent=2) + "\n", encoding="utf-8")

    def student_header(self, C: int) -> list[str]:
        h = ["id"] + self.z + [f"y_{k + 1}" for k in range(C)] + [f"w_{k + 1}" for k in range(C)]
        h.append("matched_school_id")
        if self.gender:
            h.append("gender")
        if self.lottery:
            h.append("lottery")
        h += self.tags
        h += [f"{p}_{k + 1}" for p in self.pair for k in range(C)]
        return h

    def school_header(self, with_cutoff: bool) -> list[str]:
        h = ["id", "type", "capacity", "gender_restriction"] + self.attributes
        return h + ["cutoff"] if with_cutoff else h


def save_market(directory, market: Market, matching: Matching | np.ndarray | None = None):
    """Write ``students.csv``, ``schools.csv`` and ``schema.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    schema = DataSchema.of(market)
    C, n = market.n_colleges, market.n_students
    assignment = np.zeros(n, dtype=np.int64)
    cutoffs = None
    if matching is not None:
        assignment = np.asarray(getattr(matching, "assignment", matching), dtype=np.int64)
        cutoffs = getattr(matching, "cutoffs", None)
    ids = np.concatenate([[0], market.college_ids])
    rows = []
    for i in range(n):
        r = [str(market.student_ids[i])] + [fmt(x) for x in market.z[i]]
        r += [fmt(x) for x in market.y[i]] + [fmt(x) for x in market.w[i]]
        r.append(str(ids[assignment[i]]))
        if schema.gender:
            r.append(str(market.gender[i]))
        if schema.lottery:
            r.append(fmt(market.lottery[i]))
        r += [str(int(market.tags[t][i])) for t in schema.tags]
        r += [fmt(market.pair[p][i, k]) for p in schema.pair for k in range(C)]
        rows.append(r)
    _write(d / "students.csv", schema.student_header(C), rows)
    rows = []
    for c in range(C):
        r = [str(market.college_ids[c]), market.school_types[c].value, str(market.capacities[c]),
             market.college_gender[c] or ""]
        r += [fmt(x) for x in market.attributes[c]]
        if cutoffs is not None:
            r.append(fmt(cutoffs[c]))
        rows.append(r)
    _write(d / "schools.csv", schema.school_header(cutoffs is not None), rows)
    schema.save(d / "schema.json")
    return d


@dataclass(eq=False)
class LoadedMarket:
    market: Market
    matching: Matching
    binding: np.ndarray

    def __iter__(self):
        return iter((self.market, self.matching))


def load_market(students_path, schools_path, schema_path) -> LoadedMarket:
    schema = DataSchema.load(schema_path)
    sh, srows = _read(schools_path)
    need = ["id", "type", "capacity", "gender_restriction"] + schema.attributes
    for col in need:
        if col not in sh:
            raise SchemaError("missing column in schools table", column=col)
    extra = set(sh) - set(need) - {"cutoff"}
    if extra:
        raise SchemaError(f"undeclared columns in schools table: {sorted(extra)}")
    C = len(srows)
    if C == 0:
        raise SchemaError("schools table has no rows")
    col = {k: sh.index(k) for k in sh}
    cids, caps, types, cg, attrs = [], [], [], [], []
    for r, row in enumerate(srows, start=1):
        if len(row) != len(sh):
            raise SchemaError(f"expected {len(sh)} fields, found {len(row)}", row=r)
        cids.append(_num(row[col["id"]], r, "id", int))
        caps.append(_num(row[col["capacity"]], r, "capacity", int))
        try:
            types.append(SchoolType(row[col["type"]]))
        except ValueError:
            raise SchemaError(f"unknown school type {row[col['type']]!r}", row=r, column="type") from None
        cg.append(row[col["gender_restriction"]] or None)
        attrs.append([_num(row[col[a]], r, a) for a in schema.attributes])
    if len(set(cids)) != C:
        raise SchemaError("duplicate school ids")
    pos = {cid: k + 1 for k, cid in enumerate(cids)}

    header, rows = _read(students_path)
    expected = schema.student_header(C)
    missing = [h for h in expected if h not in header]
    if missing:
        raise SchemaError("missing column in students table", column=missing[0])
    extra = set(header) - set(expected)
    if extra:
        raise SchemaError(f"undeclared columns in students table: {sorted(extra)}")
    col = {k: header.index(k) for k in header}
    n = len(rows)
    sid = np.empty(n, dtype=np.int64)
    z = np.empty((n, len(schema.z)))
    y = np.empty((n, C))
    w = np.empty((n, C))
    assign = np.empty(n, dtype=np.int64)
    gender = np.empty(n, dtype=object) if schema.gender else None
    lottery = np.empty(n) if schema.lottery else None
    tags = {t: np.empty(n, dtype=bool) for t in schema.tags}
    pair = {p: np.empty((n, C)) for p in schema.pair}
    for i, row in enumerate(rows):
        r = i + 1
        if len(row) != len(header):
            raise SchemaError(f"expected {len(header)} fields, found {len(row)}", row=r)
        sid[i] = _num(row[col["id"]], r, "id", int)
        z[i] = [_num(row[col[k]], r, k) for k in schema.z]
        y[i] = [_num(row[col[f"y_{k + 1}"]], r, f"y_{k + 1}") for k in range(C)]
        w[i] = [_num(row[col[f"w_{k + 1}"]], r, f"w_{k + 1}") for k in range(C)]
        m = _num(row[col["matched_school_id"]], r, "matched_school_id", int)
        if m != 0 and m not in pos:
            raise SchemaError(f"unknown school id {m}", row=r, column="matched_school_id")
        assign[i] = pos.get(m, 0)
        if gender is not None:
            gender[i] = row[col["gender"]]
        if lottery is not None:
            lottery[i] = _num(row[col["lottery"]], r, "lottery")
        for t in schema.tags:
            v = row[col[t]]
            if v not in ("0", "1"):
                raise SchemaError(f"tag must be 0 or 1, got {v!r}", row=r, column=t)
            tags[t][i] = v == "1"
        for p in schema.pair:
            pair[p][i] = [_num(row[col[f"{p}_{k + 1}"]], r, f"{p}_{k + 1}") for k in range(C)]
    for name, arr in (("y", y), ("w", w), ("z", z)):
        bad = np.argwhere(~np.isfinite(arr))
        if bad.size:
            raise SchemaError(f"non-finite value in {name}", row=int(bad[0, 0]) + 1)
    market = Market(y=y, w=w, z=z, capacities=np.array(caps), school_types=tuple(types),
                    z_names=tuple(schema.z), student_ids=sid, college_ids=np.array(cids),
                    gender=gender, college_gender=tuple(cg), tags=tags,
                    attributes=np.array(attrs, dtype=float).reshape(C, -1),
                    attribute_names=tuple(schema.attributes), pair=pair, lottery=lottery)
    counts = np.bincount(assign, minlength=C + 1)[1:]
    over = np.flatnonzero(counts > market.capacities)
    if over.size:
        c = over[0]
        raise DataError(f"school {cids[c]} has {counts[c]} matched students for capacity {caps[c]}")
    adm = market.admissible()
    bad = np.flatnonzero((assign > 0) & ~adm[np.arange(n), np.maximum(assign - 1, 0)])
    if bad.size:
        raise DataError(f"student in row {bad[0] + 1} is matched to a school that excludes them")
    cutoffs = np.full(C, -np.inf)
    sh_col = sh.index("cutoff") if "cutoff" in sh else None
    if sh_col is not None:
        cutoffs = np.array([_num(row[sh_col], r, "cutoff") for r, row in enumerate(srows, start=1)])
    return LoadedMarket(market, Matching(assign, cutoffs), counts == market.capacities)


def load_market_dir(directory) -> LoadedMarket:
    d = Path(directory)
    return load_market(d / "students.csv", d / "schools.csv", d / "schema.json")


def save_utilities(path, utilities: LatentUtilities):
    """Latent utilities as one row per student: ``u_0..u_C, v_1..v_C``."""
    n, K = utilities.student.shape
    header = [f"u_{k}" for k in range(K)] + [f"v_{k + 1}" for k in range(K - 1)]
    rows = ([fmt(x) for x in utilities.student[i]] + [fmt(x) for x in utilities.college[:, i]]
            for i in range(n))
    _write(path, header, rows)


def load_utilities(path) -> LatentUtilities:
    header, rows = _read(path)
    K = sum(h.startswith("u_") for h in header)
    arr = np.array([[_num(x, r + 1, header[j]) for j, x in enumerate(row)] for r, row in enumerate(rows)])
    arr = arr.reshape(len(rows), len(header))
    return LatentUtilities(arr[:, :K], arr[:, K:].T.copy())


def save_table(path, header, rows):
    _write(path, header, [[x if isinstance(x, str) else fmt(x) for x in r] for r in rows])


# ---------------------------------------------------------------------------
# configuration

DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0", "output": "out", "verbosity": "info", "threads": "1"},
    "dgp": {"preset": "appendix_c1", "n_students": "3000", "capacities": "750,700,750"},
    "kernel": {"bandwidths": "silverman", "trim_fraction": "0.05", "leave_one_out": "false",
               "scale": "1.0"},
    "gibbs": {"iterations": "50000", "burn_in": "20000", "chains": "1", "prior_var_scale": "100",
              "sigma_prior": "1,2", "thin": "1", "audit_every": "0", "checkpoint_every": "0",
              "init_dispersion": "0", "rescale": "true",
              "reflect": "true"},
    "counterfactual": {"flag": "low_income", "scope": "", "distance_coef": "", "n_blocks": "15",
                       "block_size": "100", "group": ""},
    "fit": {"n_sims": "100", "benchmark_sims": "100"},
    "mc": {"samples": "150", "estimator": "bayes", "model": "general", "first_seed": "0"},
}


@dataclass
class RunConfig:
    sections: dict[str, dict[str, str]]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({s: dict(v) for s, v in DEFAULTS.items()})

    @classmethod
    def load(cls, path=None, overrides: dict[str, dict[str, str]] | None = None) -> "RunConfig":
        cfg = cls.defaults()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path, encoding="utf-8") as fh:
                    parser.read_file(fh)
            except FileNotFoundError as exc:
                raise ConfigError(f"config file not found: {path}") from exc
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
            for sec in parser.sections():
                cfg._merge(sec, dict(parser.items(sec)))
        for sec, vals in (overrides or {}).items():
            cfg._merge(sec, {k: str(v) for k, v in vals.items() if v is not None})
        env = os.environ.get(THREADS_ENV)
        if env:
            cfg._merge("run", {"threads": env})
        cfg.validate()
        return cfg

    def _merge(self, sec, vals):
        if sec not in self.sections:
            raise ConfigError(f"unknown config section [{sec}]")
        for k, v in vals.items():
            if k not in self.sections[sec] and not (sec == "dgp" and k in _DGP_EXTRA):
                raise ConfigError(f"unknown key {k!r} in section [{sec}]")
            self.sections[sec][k] = v

    def validate(self):
        try:
            self.int("run", "seed")
            if self.int("run", "threads") < 1:
                raise ConfigError("threads must be >= 1")
            self.gibbs()
            self.kernel()
            self.dgp()
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def get(self, sec, key) -> str:
        return self.sections[sec][key]

    def int(self, sec, key) -> int:
        return int(self.get(sec, key))

    def float(self, sec, key) -> float:
        return float(self.get(sec, key))

    def bool(self, sec, key) -> bool:
        v = self.get(sec, key).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{sec}] {key} must be a boolean, got {v!r}")

    def floats(self, sec, key) -> tuple[float, ...]:
        return tuple(float(x) for x in self.get(sec, key).split(",") if x.strip())

    @property
    def seed(self) -> int:
        return self.int("run", "seed")

    @property
    def threads(self) -> int:
        return self.int("run", "threads")

    def gibbs(self):
        from .bayes import GibbsConfig

        s = "gibbs"
        return GibbsConfig(iterations=self.int(s, "iterations"), burn_in=self.int(s, "burn_in"),
                           chains=self.int(s, "chains"), prior_var_scale=self.float(s, "prior_var_scale"),
                           sigma_prior=self.floats(s, "sigma_prior"), thin=self.int(s, "thin"),
                           seed=self.seed, audit_every=self.int(s, "audit_every"),
                           checkpoint_every=self.int(s, "checkpoint_every"),
                           init_dispersion=self.float(s, "init_dispersion"), rescale=self.bool(s, "rescale"),
                           reflect=self.bool(s, "reflect"))

    def kernel(self):
        from .semiparam import KernelConfig

        s = "kernel"
        bw = self.get(s, "bandwidths")
        return KernelConfig(bandwidths=bw if bw == "silverman" else self.floats(s, "bandwidths"),
                            trim_fraction=self.float(s, "trim_fraction"),
                            leave_one_out=self.bool(s, "leave_one_out"), scale=self.float(s, "scale"))

    def dgp(self, seed: int | None = None):
        from .dgp import DgpConfig

        s = self.sections["dgp"]
        preset = s["preset"]
        if preset not in ("appendix_c1", "reduced"):
            raise ConfigError(f"unknown dgp preset {preset!r}")
        kw = {"n_students": int(s["n_students"]), "capacities": tuple(int(q) for q in self.floats("dgp", "capacities"))}
        for k in _DGP_EXTRA:
            if k in s:
                kw[k] = self.floats("dgp", k)
        seed = self.seed if seed is None else seed
        base = DgpConfig.reduced if preset == "reduced" else DgpConfig.appendix_c1
        if preset == "reduced":
            kw.setdefault("beta_z", (1.0,) + (0.0,) * (len(kw["capacities"]) - 1))
            kw.setdefault("gamma_z", (0.0,) * (len(kw["capacities"]) - 1) + (1.0,))
            return DgpConfig(seed=seed, **kw)
        C = len(kw["capacities"])
        for k in _DGP_EXTRA:
            kw.setdefault(k, (-1.0 if k == "beta_d" else 1.0,) * C)
        return base(seed=seed, **kw)

    def write(self, path):
        parser = configparser.ConfigParser(interpolation=None)
        for sec, vals in self.sections.items():
            parser[sec] = vals
        with open(path, "w", encoding="utf-8") as fh:
            parser.write(fh)


_DGP_EXTRA = ("beta_d", "beta_s", "beta_z", "gamma_w", "gamma_m", "gamma_z", "sigma_eps")


def worker_count(cfg: RunConfig | None = None) -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return n
    return cfg.threads if cfg is not None else 1


def write_snapshot(directory, cfg: RunConfig, extra: dict | None = None):
    """``config.resolved.ini`` (every key, defaults included) in ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cfg.write(d / "config.resolved.ini")
    if extra:
        (d / "run.json").write_text(json.dumps(extra, indent=2, default=str) + "\n", encoding="utf-8")


__all__ = ["DataSchema", "LoadedMarket", "RunConfig", "save_market", "load_market", "load_market_dir",
           "save_utilities", "load_utilities", "save_table", "write_snapshot", "worker_count", "fmt",
           "THREADS_ENV"]
