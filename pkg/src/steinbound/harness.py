"""Reproducible experiment driver.

A run is described by a TOML file with three sections: ``[experiment]``
(kind, seed), ``[model]`` and ``[estimator]``. Output location and worker
count live in ``[run]`` and are excluded from the config hash, so the CSV
is byte-identical across worker counts and output directories.

Experiments split into pure work items (one per grid point); the harness
maps them over a process pool and reduces in item order.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import gamma as gamma_fn

import numpy as np

from . import __version__
from . import boolean, covariance, discs, distance, enumeration, knn
from .bounds import (assemble_convex_bound, estimate_all, estimate_gamma12, law_moments,
                     linear_clt_bounds)
from .functionals import linear_statistic, max_functional, table_functional
from .laws import CubeVertexLaw, FiniteLaw, NormalLaw, UniformCubeLaw, bernoulli, uniform_atoms
from .resample import k_weight, tilde_delta_i_delta_j, SampleBatch
from .seeding import derive_rng, seed_label

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

CSV_COLUMNS = ("experiment", "n", "metric", "value", "stderr", "class_size", "seed",
               "config_hash", "version")
CSV_SCHEMA = "rows/1"
SELFTEST_COLUMNS = ("check", "passed", "value", "tolerance", "detail", "seed", "version")
OUTPUT_ENV = "STEINBOUND_OUTPUT_DIR"
KINDS = ("gamma", "boolean-model", "sigma-series", "knn", "rate-study")
LAWS = ("normal", "cube-vertex", "uniform-cube", "bernoulli")


@dataclass(frozen=True)
class Field:
    section: str
    name: str
    kind: type
    default: object
    help: str
    choices: tuple = ()


SCHEMA = (
    Field("experiment", "kind", str, None, "experiment to run", KINDS),
    Field("experiment", "seed", int, 0, "master seed (non-negative)"),
    Field("experiment", "name", str, "", "output file stem (default: kind)"),
    Field("model", "d", int, 2, "dimension: law/output for gamma and rate-study, "
          "space for boolean-model, sigma-series and knn"),
    Field("model", "n_grid", list, [16, 32, 64, 128], "strictly increasing sample sizes"),
    Field("model", "R", float, 0.3, "grain radius (boolean-model, sigma-series)"),
    Field("model", "k", int, 1, "neighbour count (knn)"),
    Field("model", "p", int, 12, "moment order for the nearest-neighbour bounds (knn)"),
    Field("model", "law", str, "cube-vertex", "coordinate law (gamma, rate-study)", LAWS),
    Field("estimator", "reps", int, 10000, "replicates per grid point"),
    Field("estimator", "outer_reps", int, 2000, "outer replicates of nested estimators"),
    Field("estimator", "inner_reps", int, 4, "inner replicates of nested estimators"),
    Field("estimator", "samples", int, 100000, "samples per n (rate-study)"),
    Field("estimator", "block", int, 100000, "replicate block size of the seed scheme"),
    Field("estimator", "k_max", int, 8, "series truncation depth (sigma-series)"),
    Field("estimator", "mc_samples", int, 65536, "points per series term"),
    Field("estimator", "method", str, "mc", "series integration points", ("mc", "qmc")),
    Field("estimator", "directions", int, 64, "half-space directions"),
    Field("estimator", "thresholds", int, 0, "thresholds per direction (0: every sample)"),
    Field("estimator", "corners", int, 16, "orthant grid points per axis"),
    Field("estimator", "pilot", int, 2000, "pilot replicates for centring constants"),
    Field("run", "output_dir", str, "", "output directory (default: $STEINBOUND_OUTPUT_DIR)"),
    Field("run", "workers", int, 1, "worker processes"),
)


class ConfigError(ValueError):
    """Config validation failure listing every offending field."""

    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def kind(self) -> str:
        return self.values["kind"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def stem(self) -> str:
        return self.values["name"] or self.values["kind"]

    def canonical(self) -> dict:
        """Result-determining fields only (no output path, no worker count)."""
        return {f.name: self.values[f.name] for f in SCHEMA if f.section != "run"}

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_toml(self) -> str:
        out = []
        for sec in ("experiment", "model", "estimator", "run"):
            out.append(f"[{sec}]")
            for f in SCHEMA:
                if f.section == sec:
                    out.append(f"{f.name} = {json.dumps(self.values[f.name])}")
            out.append("")
        return "\n".join(out)


def validate(raw: dict) -> ExperimentConfig:
    """Check types, ranges and choices; raise :class:`ConfigError` with all problems."""
    problems: list[str] = []
    vals: dict = {}
    known = {(f.section, f.name) for f in SCHEMA}
    for sec, body in raw.items():
        if not isinstance(body, dict):
            problems.append(f"{sec}: expected a table")
            continue
        for key in body:
            if (sec, key) not in known:
                problems.append(f"{sec}.{key}: unknown field")
    for f in SCHEMA:
        body = raw.get(f.section, {})
        v = body.get(f.name, f.default) if isinstance(body, dict) else f.default
        where = f"{f.section}.{f.name}"
        if v is None:
            problems.append(f"{where}: required")
            continue
        if f.kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if not isinstance(v, f.kind) or isinstance(v, bool):
            problems.append(f"{where}: expected {f.kind.__name__}, got {type(v).__name__}")
            continue
        if f.choices and v not in f.choices:
            problems.append(f"{where}: {v!r} not in {list(f.choices)}")
        vals[f.name] = v
    pos = ("reps", "outer_reps", "inner_reps", "samples", "block", "mc_samples", "directions",
           "corners", "pilot", "workers", "d", "k")
    for key in pos:
        if key in vals and vals[key] < 1:
            problems.append(f"{_section(key)}.{key}: must be positive, got {vals[key]}")
    if "seed" in vals and vals["seed"] < 0:
        problems.append(f"experiment.seed: must be non-negative, got {vals['seed']}")
    if "thresholds" in vals and vals["thresholds"] < 0:
        problems.append("estimator.thresholds: must be non-negative")
    if "R" in vals and not vals["R"] > 0:
        problems.append(f"model.R: must be positive, got {vals['R']}")
    if "n_grid" in vals:
        g = vals["n_grid"]
        if not g or not all(isinstance(x, int) and not isinstance(x, bool) and x >= 1 for x in g):
            problems.append("model.n_grid: must be a non-empty list of positive integers")
        elif any(b <= a for a, b in zip(g, g[1:])):
            problems.append("model.n_grid: must be strictly increasing")
    kind = vals.get("kind")
    if kind in ("boolean-model", "sigma-series") and vals.get("d") not in (1, 2):
        problems.append(f"model.d: {kind} supports d in (1, 2), got {vals.get('d')}")
    if kind == "knn" and vals.get("p", 0) < 8:
        problems.append(f"model.p: nearest-neighbour bounds require p >= 8, got {vals.get('p')}")
    if kind == "sigma-series" and vals.get("k_max", 0) < 2:
        problems.append("estimator.k_max: must be at least 2")
    if kind == "knn" and "n_grid" in vals and vals.get("k") and min(vals["n_grid"]) <= vals["k"]:
        problems.append("model.n_grid: knn needs every n > k")
    if kind in ("gamma", "rate-study") and vals.get("law") == "bernoulli" and vals.get("d") != 1:
        problems.append("model.law: bernoulli coordinates are scalar, set d = 1")
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(vals)


def _section(key: str) -> str:
    return next(f.section for f in SCHEMA if f.name == key)


def load_config(path: str) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return validate(raw)


def describe() -> str:
    """Human-readable schema of configs and outputs."""
    lines = ["Config file: TOML with sections [experiment], [model], [estimator], [run].", ""]
    for f in SCHEMA:
        extra = f" one of {list(f.choices)}" if f.choices else ""
        default = "required" if f.default is None else f"default {json.dumps(f.default)}"
        lines.append(f"  {f.section}.{f.name} ({f.kind.__name__}, {default}){extra}: {f.help}")
    lines += ["", f"CSV ({CSV_SCHEMA}) columns: {', '.join(CSV_COLUMNS)}",
              f"selftest CSV columns: {', '.join(SELFTEST_COLUMNS)}",
              "JSON payloads: sigma-series/1, knn-report/1, bound reports keyed by tag.",
              f"Default output directory: ${OUTPUT_ENV} or ./steinbound-output"]
    return "\n".join(lines)


# Output ------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None or v == "":
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def rows_to_csv(rows: list[dict], columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def atomic_write(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def output_dir(cfg_dir: str = "") -> str:
    return cfg_dir or os.environ.get(OUTPUT_ENV) or "steinbound-output"


def pool_map(fn, items: list, workers: int) -> list:
    """Ordered map; inline for one worker."""
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


# Experiments ------------------------------------------------------------------

def make_law(name: str, d: int):
    if name == "normal":
        return NormalLaw(None if d == 1 else d)
    if name == "cube-vertex":
        return CubeVertexLaw(d) if d > 1 else FiniteLaw(np.array([-1.0, 1.0]), name="sign")
    if name == "uniform-cube":
        return UniformCubeLaw(None if d == 1 else d, half_width=np.sqrt(3.0))
    if name == "bernoulli":
        return FiniteLaw(np.array([-1.0, 1.0]), name="sign")
    raise ValueError(name)


def _row(cfg: ExperimentConfig, n, metric, value, stderr=None, class_size=None, seed=None):
    return {"experiment": cfg.kind, "n": n, "metric": metric, "value": value,
            "stderr": stderr, "class_size": class_size, "seed": seed,
            "config_hash": cfg.config_hash, "version": __version__}


def _sample_sums(law, n: int, total: int, block: int, seed: int, idx: int) -> np.ndarray:
    parts = []
    for b, start in enumerate(range(0, total, block)):
        rng = derive_rng(seed, "rate-study", idx, b)
        parts.append(law.sample_sum(n, min(block, total - start), rng))
    out = np.concatenate(parts)
    return out.reshape(total, -1)


def _rate_item(args):
    values, idx = args
    cfg = ExperimentConfig(values)
    n, d = cfg["n_grid"][idx], cfg["d"]
    law = make_law(cfg["law"], d)
    w = _sample_sums(law, n, cfg["samples"], cfg["block"], cfg.seed, idx) / np.sqrt(n)
    sigma = np.atleast_2d(law.covariance())
    target = distance.GaussianTarget(sigma)
    thr = cfg["thresholds"] or None
    tag = seed_label(cfg.seed, "rate-study", idx)
    rows = []
    hs = distance.proxy_convex_distance(w, target, distance.halfspace_class(
        target, cfg["directions"], thr))
    rows.append(_row(cfg, n, "proxy-halfspace", hs.value, hs.stderr, hs.class_size, tag))
    grng = derive_rng(cfg.seed, "gaussian", idx)
    rc = distance.proxy_convex_distance(w, target, distance.rectangle_class(
        target, cfg["corners"]), grng)
    rows.append(_row(cfg, n, "proxy-rectangle", rc.value, rc.stderr, rc.class_size, tag))
    rows.append(_row(cfg, n, "dkw-envelope", distance.dkw_envelope(len(w), hs.class_size),
                     None, hs.class_size, tag))
    try:
        rep = linear_clt_bounds(law_moments(law), n, sigma).reports["linear-convex"]
        rows.append(_row(cfg, n, "bound-linear-convex", rep.bound_value, None, None, tag))
    except (NotImplementedError, KeyError):
        pass
    return rows


def _rate_reduce(cfg, rows):
    pairs = [(r["n"], max(r["value"], 1e-300)) for r in rows if r["metric"] == "proxy-halfspace"]
    if len(pairs) >= 4:
        fit = distance.rate_fit(pairs)
        rows.append(_row(cfg, None, "slope-proxy-halfspace", fit.slope, fit.half_width))
    return rows


def _gamma_item(args):
    values, idx = args
    cfg = ExperimentConfig(values)
    n, d = cfg["n_grid"][idx], cfg["d"]
    law = make_law(cfg["law"], d)
    f = linear_statistic(n, None if d == 1 else d)
    sigma = np.atleast_2d(law.covariance())
    rng = derive_rng(cfg.seed, "gamma", idx)
    tag = seed_label(cfg.seed, "gamma", idx)
    est = estimate_all(f, law, n, sigma, cfg["reps"], cfg["outer_reps"], cfg["inner_reps"],
                       rng, tag)
    rows = [_row(cfg, n, r["name"], r["value"], r["stderr"], None, tag) for r in est.to_records()]
    rows.append(_row(cfg, n, "bound-convex", assemble_convex_bound(est, sigma).bound_value,
                     None, None, tag))
    try:
        lb = linear_clt_bounds(law_moments(law), n, sigma)
        for name in ("gamma1", "gamma2", "gamma3", "gamma4", "sigma_term"):
            rows.append(_row(cfg, n, f"closed-form-{name}", getattr(lb, name), None, None, tag))
    except NotImplementedError:
        pass
    return rows


def _boolean_item(args):
    values, idx = args
    cfg = ExperimentConfig(values)
    n, d, R = cfg["n_grid"][idx], cfg["d"], cfg["R"]
    center = boolean.pilot_center(d, n, R, cfg["pilot"], cfg.seed)
    f = boolean.boolean_functional(d, n, R, center)
    rng = derive_rng(cfg.seed, "boolean-model", idx)
    tag = seed_label(cfg.seed, "boolean-model", idx)
    est = boolean.empirical_covariance(f, boolean.germ_law(d, n), n, cfg["reps"], rng)
    rows = []
    for i in range(d + 1):
        rows.append(_row(cfg, n, f"mean[{i}]", est.mean[i], est.mean_stderr[i], None, tag))
        for j in range(i, d + 1):
            rows.append(_row(cfg, n, f"sigma_n[{i},{j}]", est.matrix[i, j], est.stderr[i, j],
                             None, tag))
    if d == 1 and 2 * R <= n:
        ex = boolean.exact_covariance_1d(n, R)
        for i in range(2):
            for j in range(i, 2):
                rows.append(_row(cfg, n, f"exact-sigma_n[{i},{j}]", ex[i, j], None, None, tag))
    return rows


def _boolean_reduce(cfg, rows):
    d, R = cfg["d"], cfg["R"]
    if d == 1:
        lim = covariance.sigma_exact_1d(R)
        label = "exact"
    else:
        rng = derive_rng(cfg.seed, "sigma-series", 0)
        lim = covariance.sigma_series(d, R, cfg["k_max"], cfg["mc_samples"], rng,
                                      cfg["method"]).sigma
        label = "series"
    by_n: dict = {}
    for r in rows:
        by_n.setdefault(r["n"], {})[r["metric"]] = r["value"]
    out = list(rows)
    for prefix in ("sigma_n", "exact-sigma_n"):
        pairs = []
        for n, m in by_n.items():
            keys = [k for k in m if k.startswith(prefix + "[")]
            if not keys:
                continue
            mat = np.zeros((d + 1, d + 1))
            for k in keys:
                i, j = map(int, k[len(prefix) + 1:-1].split(","))
                mat[i, j] = mat[j, i] = m[k]
            gap = covariance.covariance_gap_report(mat, lim).max_gap
            out.append(_row(cfg, n, f"gap-{prefix}-vs-{label}", gap))
            pairs.append((n, gap))
        if len(pairs) >= 4 and all(g > 0 for _, g in pairs):
            fit = distance.rate_fit(pairs)
            out.append(_row(cfg, None, f"slope-gap-{prefix}", fit.slope, fit.half_width))
    return out


def _sigma_item(args):
    values, _ = args
    cfg = ExperimentConfig(values)
    rng = derive_rng(cfg.seed, "sigma-series", 0)
    tag = seed_label(cfg.seed, "sigma-series", 0)
    s = covariance.sigma_series(cfg["d"], cfg["R"], cfg["k_max"], cfg["mc_samples"], rng,
                                cfg["method"], seed_label=tag)
    rows = []
    for i in range(cfg["d"] + 1):
        for j in range(i, cfg["d"] + 1):
            rows.append(_row(cfg, None, f"sigma[{i},{j}]", s.sigma[i, j], s.stderr[i, j],
                             None, tag))
    for k, mag in enumerate(s.magnitudes, start=2):
        rows.append(_row(cfg, None, f"term-magnitude[{k}]", mag, None, None, tag))
    rows.append(_row(cfg, None, "min-eigenvalue", s.min_eigenvalue, None, None, tag))
    return rows, s.to_json()


def _knn_item(args):
    values, idx = args
    cfg = ExperimentConfig(values)
    n = cfg["n_grid"][idx]
    rng = derive_rng(cfg.seed, "knn", idx)
    tag = seed_label(cfg.seed, "knn", idx)
    feats = knn.degree_sum_features(cfg["k"])
    rep = knn.knn_bound_report(feats, n, cfg["d"], cfg["p"], cfg["reps"], rng,
                               pilot=cfg["pilot"], seed=tag)
    rows = [_row(cfg, n, "delta-moment4", rep.delta_moment4, None, None, tag),
            _row(cfg, n, "delta-max", rep.delta_max, None, None, tag),
            _row(cfg, n, "eta_p", rep.eta_p, None, None, tag),
            _row(cfg, n, "gamma1", rep.gamma1, None, None, tag),
            _row(cfg, n, "gamma2", rep.gamma2, None, None, tag),
            _row(cfg, n, "m-bound-fraction", rep.m_bound_fraction, None, None, tag)]
    for q, v in rep.m_moments.items():
        rows.append(_row(cfg, n, f"M-moment{q}", v, None, None, tag))
    for name, v in rep.bounds.items():
        if v is not None:
            rows.append(_row(cfg, n, f"bound-{name}", float(v), None, None, tag))
    return rows, rep.to_json()


def _knn_reduce(cfg, rows):
    pairs = [(r["n"], r["value"]) for r in rows if r["metric"] == "bound-knn-smooth"]
    if len(pairs) >= 4:
        fit = distance.rate_fit(pairs)
        rows.append(_row(cfg, None, "slope-bound-knn-smooth", fit.slope, fit.half_width))
    return rows


@dataclass
class RunResult:
    rows: list[dict]
    csv_path: str
    json_path: str | None


def run(cfg: ExperimentConfig, out_dir: str | None = None, workers: int | None = None) -> RunResult:
    """Execute an experiment and write ``<stem>.csv`` (and ``<stem>.json``)."""
    out_dir = output_dir(out_dir or cfg["output_dir"])
    workers = workers or cfg["workers"]
    grid = range(len(cfg["n_grid"]))
    items = [(cfg.values, i) for i in grid]
    payload = None
    if cfg.kind == "rate-study":
        rows = _rate_reduce(cfg, [r for rs in pool_map(_rate_item, items, workers) for r in rs])
    elif cfg.kind == "gamma":
        rows = [r for rs in pool_map(_gamma_item, items, workers) for r in rs]
    elif cfg.kind == "boolean-model":
        rows = _boolean_reduce(cfg, [r for rs in pool_map(_boolean_item, items, workers)
                                     for r in rs])
    elif cfg.kind == "sigma-series":
        rows, payload = _sigma_item((cfg.values, 0))
    elif cfg.kind == "knn":
        res = pool_map(_knn_item, items, workers)
        rows = _knn_reduce(cfg, [r for rs, _ in res for r in rs])
        payload = "[" + ",".join(js for _, js in res) + "]"
    else:  # validated earlier
        raise ValueError(cfg.kind)
    csv_path = os.path.join(out_dir, f"{cfg.stem}.csv")
    json_path = None
    if payload is not None:
        json_path = os.path.join(out_dir, f"{cfg.stem}.json")
        atomic_write(json_path, payload + "\n")
    atomic_write(csv_path, rows_to_csv(rows))
    return RunResult(rows, csv_path, json_path)


def summary_table(rows: list[dict], limit: int = 40) -> str:
    lines = [f"{'n':>8}  {'metric':<34} {'value':>14} {'stderr':>12}"]
    for r in rows[:limit]:
        n = "" if r.get("n") is None else str(r["n"])
        se = "" if r.get("stderr") is None else f"{r['stderr']:.4g}"
        lines.append(f"{n:>8}  {r['metric']:<34} {r['value']:>14.6g} {se:>12}")
    if len(rows) > limit:
        lines.append(f"... {len(rows) - limit} more rows in the CSV")
    return "\n".join(lines)


# Selftest ---------------------------------------------------------------------

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""


def _random_table(rng, s: int, n: int) -> np.ndarray:
    return rng.integers(-3, 4, size=(s,) * n).astype(float)


def check_weights(seed: int) -> CheckResult:
    worst = 0
    for n in range(1, 21):
        total = sum(Fraction(k_weight(n, a)) * (n - a) * __import__("math").comb(n, a)
                    for a in range(n))
        worst = max(worst, abs(total - n))
    return CheckResult("weight-normalization", worst == 0, float(worst), 0.0)


def check_covariance_decomposition(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 1)
    worst = 0.0
    for t in range(12):
        s, n = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        law = uniform_atoms(*range(s))
        g = table_functional(law.values, _random_table(rng, s, n))
        h = table_functional(law.values, _random_table(rng, s, n))
        lhs, rhs = enumeration.lemma_covariance_decomposition(g, h, law, n)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return CheckResult("covariance-decomposition", worst <= 1e-12, worst, 1e-12)


def check_expected_t(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 2)
    worst = 0.0
    for t in range(8):
        s, n = int(rng.integers(2, 4)), int(rng.integers(1, 4))
        law = uniform_atoms(*range(s))
        f = table_functional(law.values, _random_table(rng, s, n))
        et, cov = enumeration.exact_expected_t(f, law, n)
        worst = max(worst, float(np.max(np.abs(et - cov))))
    return CheckResult("expected-t-equals-covariance", worst <= 1e-12, worst, 1e-12)


def check_linear_second_order(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 3)
    n = 4
    f = linear_statistic(n, zero_tol=0.0)
    law = FiniteLaw(np.array([-1.5, 0.25, 2.0]))
    worst = 0.0
    for _ in range(50):
        batch = SampleBatch.draw(law, n, rng)
        for i in range(n):
            for j in range(n):
                if i != j:
                    worst = max(worst, float(np.max(np.abs(
                        tilde_delta_i_delta_j(f, batch, i, j)))))
    return CheckResult("linear-second-order-zero", worst == 0.0, worst, 0.0)


def check_kappa(seed: int) -> CheckResult:
    worst = 0.0
    # independent recursion kappa_m = 2 pi / m * kappa_{m-2}
    ref = {0: 1.0, 1: 2.0}
    for m in range(2, 11):
        ref[m] = 2.0 * np.pi / m * ref[m - 2]
    for m in range(11):
        closed = np.pi ** (m / 2) / gamma_fn(m / 2 + 1)
        worst = max(worst, abs(covariance.kappa(m) - ref[m]), abs(closed - ref[m]))
    return CheckResult("kappa-table", worst <= 1e-12, worst, 1e-12)


def check_wills(seed: int) -> CheckResult:
    a = covariance.wills_functional(covariance.ConvexBody.ball(1, 1.0))
    b = covariance.wills_functional(covariance.ConvexBody.ball(2, 1.0))
    err = max(abs(a - 4.0), abs(b - 4 * np.pi))
    return CheckResult("wills-functional", err <= 1e-12, err, 1e-12)


def check_p_coefficients(seed: int) -> CheckResult:
    R = 0.7
    P = covariance.p_coefficients(1, R)
    e = np.exp(-2 * R)
    err = float(np.max(np.abs(P - np.array([[e, -e], [0.0, e]]))))
    return CheckResult("p-coefficients", err <= 1e-14, err, 1e-14)


def check_pp_identity(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 8)
    worst = 0.0
    for _ in range(10):
        R = float(rng.uniform(0.05, 1.5))
        length = float(rng.uniform(0.0, 3.0))
        worst = max(worst, covariance.pp_identity_check(1, R, [1.0, length], 40).max_error)
    return CheckResult("p-series-identity", worst <= 1e-8, worst, 1e-8)


def check_disc_examples(seed: int) -> CheckResult:
    lens = 2 * np.pi / 3 - np.sqrt(3) / 2
    expect = {((0, 0),): (1, np.pi, np.pi), ((0, 0), (3, 0)): (2, 2 * np.pi, 2 * np.pi),
              ((0, 0), (1, 0)): (1, 4 * np.pi / 3, 2 * np.pi - lens)}
    worst = 0.0
    for c, v in expect.items():
        worst = max(worst, float(np.max(np.abs(discs.union_measures(c, 1.0).vector - v))))
    inter = discs.intersection_measures(np.array([[0.0, 0.0], [1.0, 0.0]]), 1.0)
    worst = max(worst, abs(inter[2] - lens), abs(inter[1] - 2 * np.pi / 3))
    return CheckResult("disc-closed-forms", worst <= 1e-12, worst, 1e-12)


def check_gauss_bonnet(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 10)
    worst = 0.0
    for _ in range(400):
        m = int(rng.integers(3, 11))
        c = rng.uniform(-2, 2, size=(m, 2))
        worst = max(worst, discs.union_measures(c, 0.8).residual)
    return CheckResult("gauss-bonnet-integrality", worst < 1e-6, worst, 1e-6)


def check_interval_union(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 11)
    worst = 0.0
    grid = np.arange(-6, 6, 1e-4) + 5e-5
    for _ in range(5):
        x = rng.uniform(-4, 4, size=6)
        v = boolean.union_volumes_1d(x, 0.4)
        inside = np.any(np.abs(grid[:, None] - x) <= 0.4, axis=1)
        runs = np.count_nonzero(np.diff(inside.astype(int)) == 1) + int(inside[0])
        worst = max(worst, abs(v[1] - inside.sum() * 1e-4), abs(v[0] - runs))
    return CheckResult("interval-union-grid", worst <= 1e-3, worst, 1e-3)


def check_knn_noninteraction(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 12)
    feats = knn.degree_sum_features(1)
    bad = used = 0
    for _ in range(300):
        n = 12
        x = rng.uniform(0, np.sqrt(n), size=(n, 2))
        xp = rng.uniform(0, np.sqrt(n), size=(n, 2))
        i, j = rng.choice(n, 2, replace=False)
        applicable, holds = knn.noninteraction_check(feats, x, xp, int(i), int(j))
        used += applicable
        bad += applicable and not holds
    return CheckResult("knn-noninteraction", bad == 0, float(bad), 0.0, f"{used} applicable")


def check_series_term(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 13)
    t, se = covariance.series_term(1, 1.0, 2, 1 << 16, rng, "qmc")
    ref = 0.5 * np.exp(-4.0) * 16.0 / 3.0
    err = abs(t[1, 1] - ref)
    return CheckResult("series-k2-term", err <= max(4 * se[1, 1], 1e-4), float(err), 1e-4)


def check_exact_mean(seed: int) -> CheckResult:
    a = boolean.exact_mean_1d(60, 0.3, "spacings")
    b = boolean.exact_mean_1d(60, 0.3, "inclusion-exclusion")
    err = float(np.max(np.abs(a - b)))
    return CheckResult("boolean-exact-mean", err <= 1e-9, err, 1e-9)


def check_gamma_estimator(seed: int) -> CheckResult:
    rng = derive_rng(seed, "selftest", 15)
    f, law, n = max_functional(), bernoulli(0.5), 3
    exact = enumeration.exact_gamma_totals(f, law, n, n_cap=3).cube_sum
    est = estimate_gamma12(f, law, n, 40000, rng).gamma1
    z = abs(est.value - exact) / est.stderr
    return CheckResult("gamma1-estimator", z <= 4.0, float(z), 4.0, "z-score")


CHECKS = {
    "weight-normalization": check_weights,
    "covariance-decomposition": check_covariance_decomposition,
    "expected-t-equals-covariance": check_expected_t,
    "linear-second-order-zero": check_linear_second_order,
    "kappa-table": check_kappa,
    "wills-functional": check_wills,
    "p-coefficients": check_p_coefficients,
    "p-series-identity": check_pp_identity,
    "disc-closed-forms": check_disc_examples,
    "gauss-bonnet-integrality": check_gauss_bonnet,
    "interval-union-grid": check_interval_union,
    "knn-noninteraction": check_knn_noninteraction,
    "series-k2-term": check_series_term,
    "boolean-exact-mean": check_exact_mean,
    "gamma1-estimator": check_gamma_estimator,
}


def _run_check(args) -> CheckResult:
    name, seed = args
    try:
        return CHECKS[name](seed)
    except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
        return CheckResult(name, False, float("nan"), float("nan"), f"error: {exc}")


def selftest(seed: int = 0, workers: int = 1, out_dir: str | None = None,
             names: list[str] | None = None) -> tuple[list[CheckResult], str]:
    """Run the named invariant checks and write ``selftest.csv``."""
    names = list(CHECKS) if names is None else names
    results = pool_map(_run_check, [(nm, seed) for nm in names], workers)
    rows = [{"check": r.name, "passed": r.passed, "value": r.value, "tolerance": r.tolerance,
             "detail": r.detail, "seed": seed, "version": __version__} for r in results]
    path = os.path.join(output_dir(out_dir or ""), "selftest.csv")
    atomic_write(path, rows_to_csv(rows, SELFTEST_COLUMNS))
    return results, path
