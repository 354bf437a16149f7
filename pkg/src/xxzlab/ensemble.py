"""Seeded disorder ensembles: sampling, parallel measurement, aggregation, fits.

Every sample ``i`` of an experiment draws its field from a generator seeded
with ``(master_seed, i)`` and any auxiliary randomness (random sets, random
energies) from ``(master_seed, i, 1)``.  Workers therefore share nothing but
the configuration and records are merged by index, so results do not depend
on the worker count or on completion order.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from .geometry import ChainRegion, SiteSet, fatten
from .hamiltonian import (DisorderSample, EnergyIntervals, ModelError, ModelParams, build_diagonal,
                          ceil_half, check_half_integer)
from .quasiloc import (MeasurementRecord, PreconditionError, ct_check, eigencorrelator,
                       multi_probe_norm, resolvent_crossing_norm, tail_probability_probe)
from .sample import SampleContext

SCHEMA_VERSION = 1
CODE_VERSION = "0.1.0"
WORKERS_ENV = "XXZLAB_WORKERS"
MAX_FAILURE_FRACTION = 0.01
DISTRIBUTIONS = ("uniform", "beta")


class EnsembleError(RuntimeError):
    pass


class SchemaError(EnsembleError):
    pass


class PersistError(EnsembleError):
    pass


# --- disorder -------------------------------------------------------------

@dataclass(frozen=True)
class DisorderSpec:
    """Single-site field distribution on ``[0, 1]``.

    ``beta`` takes shape parameters ``(a, b)``; both must be at least 1 so that
    the density stays bounded.
    """

    name: str = "uniform"
    params: tuple = ()

    def __post_init__(self):
        if self.name not in DISTRIBUTIONS:
            raise ModelError(f"unknown distribution {self.name!r}; choose from {DISTRIBUTIONS}")
        if self.name == "beta":
            if len(self.params) != 2 or min(self.params) < 1:
                raise ModelError("beta needs two shape parameters, both >= 1")

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.name == "uniform":
            return rng.random(n)
        a, b = self.params
        return rng.beta(a, b, n)


def sample_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    if index < 0:
        raise ValueError("sample index must be nonnegative")
    key = [master_seed, index] if stream == 0 else [master_seed, index, stream]
    return np.random.default_rng(np.random.SeedSequence(key))


def sample_disorder(spec: DisorderSpec, master_seed: int, index: int,
                    region: ChainRegion) -> DisorderSample:
    omega = spec.draw(sample_rng(master_seed, index), region.length)
    return DisorderSample(region, tuple(float(w) for w in omega), seed=index)


# --- configuration --------------------------------------------------------

@dataclass(frozen=True)
class EnsembleConfig:
    """One experiment: model, disorder, statistic, grid and sample count.

    ``axis`` names the grid variable (``dist`` or ``ell``); ``options`` holds
    experiment-specific knobs such as the energy fraction or ``alpha``.
    """

    experiment: str
    L: int
    delta: float
    lam: float
    grid: tuple
    samples: int = 100
    seed: int = 0
    q: float = 0.5
    t: float = 1.0
    distribution: str = "uniform"
    dist_params: tuple = ()
    policy: str = "shrunken"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise EnsembleError(f"unknown experiment {self.experiment!r}")
        if self.samples < 1:
            raise EnsembleError("sample count must be at least 1")
        if not self.grid:
            raise EnsembleError("grid must be nonempty")
        if self.L < 2:
            raise EnsembleError("the chain needs at least two sites")
        check_half_integer(self.q)
        ModelParams(self.delta, self.lam)
        DisorderSpec(self.distribution, tuple(self.dist_params))
        if EXPERIMENTS[self.experiment].axis == "ell" and min(self.grid) < 1:
            raise EnsembleError("ell must be at least 1")

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.delta, self.lam, self.q)

    @property
    def region(self) -> ChainRegion:
        return ChainRegion(1, self.L)

    @property
    def disorder(self) -> DisorderSpec:
        return DisorderSpec(self.distribution, tuple(self.dist_params))

    @property
    def axis(self) -> str:
        return EXPERIMENTS[self.experiment].axis

    def to_json(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["dist_params"] = list(self.dist_params)
        return d

    @classmethod
    def from_json(cls, data: dict) -> "EnsembleConfig":
        d = dict(data)
        d["grid"] = tuple(d["grid"])
        d["dist_params"] = tuple(d.get("dist_params", ()))
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise EnsembleError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --- experiments ----------------------------------------------------------

@dataclass(frozen=True)
class Experiment:
    name: str
    axis: str
    statistic: str
    run: object
    description: str


def _centre(region: ChainRegion) -> int:
    return region.lo + (region.length - 1) // 2


def _record(cfg, index, x, statistic, value, **aux) -> MeasurementRecord:
    ell = x if cfg.axis == "ell" else None
    dist = x if cfg.axis == "dist" else None
    return MeasurementRecord(index, cfg.L, cfg.delta, cfg.lam, cfg.q, ell, dist, statistic,
                             float(value), aux)


def _context(cfg: EnsembleConfig, index: int) -> SampleContext:
    omega = sample_disorder(cfg.disorder, cfg.seed, index, cfg.region)
    return SampleContext(cfg.params, omega)


def _centred_pair(reg: ChainRegion, d: int, width: int = 1):
    c = _centre(reg)
    A = reg.interval(c, c + width - 1)
    return A, fatten(reg, A, d - 1)


def run_quasiloc(cfg, index):
    """``||P_-^A (H - E)^{-1} P_+^B||^{1/4}`` with ``A`` the centre site and
    ``B = [A]_{d-1}``, so that ``dist(A, B^c) = d``."""
    ctx = _context(cfg, index)
    S = ctx.full_spectrum()
    E = cfg.options.get("energy_frac", 0.5) * ctx.u
    power = cfg.options.get("power", 0.25)
    out = []
    for d in cfg.grid:
        A, B = _centred_pair(ctx.region, int(d))
        val, dist = resolvent_crossing_norm(S, A, B, complex(E), power=power)
        out.append(_record(cfg, index, d, "resolvent_crossing", val, energy=E))
    return out


def run_eigencorr(cfg, index):
    """Eigencorrelator surrogate (upper bound) with the witness (lower bound) in aux."""
    ctx = _context(cfg, index)
    J = EnergyIntervals(cfg.q, ctx.u).I_le_q
    S = ctx.spectrum(cutoff=J.upper)
    out = []
    for d in cfg.grid:
        A, B = _centred_pair(ctx.region, int(d))
        res = eigencorrelator(S, A, B, J)
        out.append(_record(cfg, index, d, "eigencorrelator", res["surrogate"],
                           witness=res["witness"], n_eigenvalues=res["n_eigenvalues"]))
    return out


def _random_pair(reg: ChainRegion, d: int, rng):
    """Random interval ``A`` and ``B = [A]_{d-1}`` cut at the region edge."""
    n = reg.length
    width = int(rng.integers(1, max(2, n // 3) + 1))
    lo = int(rng.integers(reg.lo, reg.hi - width + 2))
    A = reg.interval(lo, lo + width - 1)
    return A, fatten(reg, A, d - 1)


def run_ct_check(cfg, index):
    """Crossing norm of the gapped resolvent against the exponential bound;
    value 1 for a pass of the stated bound, aux carries both bounds."""
    ctx = _context(cfg, index)
    k = ceil_half(cfg.q)
    S_hat = ctx.modified(k)
    S_hat.provenance["params"] = cfg.params
    rng = sample_rng(cfg.seed, index, 1)
    top = EnergyIntervals(k, ctx.u).I_check_le_q.hi
    delta0 = cfg.options.get("delta0", cfg.delta)
    out = []
    for d in cfg.grid:
        A, B = _random_pair(ctx.region, int(d), rng)
        z = complex(rng.uniform(-1.0, top), rng.uniform(-0.5, 0.5))
        res = ct_check(S_hat, A, B, z, delta0, q=cfg.q, delta=cfg.delta)
        out.append(_record(cfg, index, d, "ct_pass", float(res.passed),
                           measured=res.measured, bound=res.bound,
                           lemma_bound=res.lemma_bound, lemma_pass=float(res.lemma_passed),
                           exact_dist=res.dist,
                           ratio=res.measured / res.bound if res.bound > 0 else 0.0))
    return out


def _probes(reg: ChainRegion, k: int, ell: int) -> list[SiteSet]:
    gap = 2 * ell + 1
    span = k * gap
    start = _centre(reg) - span // 2
    sites = [start + i * gap for i in range(k + 1)]
    if sites[0] < reg.lo or sites[-1] > reg.hi:
        raise PreconditionError(f"{k + 1} probes spaced {gap} do not fit in {reg.to_str()}")
    return [reg.sites([s]) for s in sites]


def run_multiprobe(cfg, index):
    """``||P_{I<=k} prod_i P_-^{S_i}||`` for ``k+1`` single-site probes spaced ``2 ell + 1``."""
    ctx = _context(cfg, index)
    k = int(cfg.options.get("k", ceil_half(cfg.q)))
    I = EnergyIntervals(k, ctx.u).I_le_q
    S = ctx.spectrum(cutoff=I.upper)
    return [_record(cfg, index, ell, "multi_probe",
                    multi_probe_norm(S, k, _probes(ctx.region, k, int(ell)), int(ell), cfg.delta))
            for ell in cfg.grid]


def run_tailprob(cfg, index):
    """Indicator that a sector with more than ``2 ell + k`` particles reaches ``I_{<=k}``."""
    ctx = _context(cfg, index)
    k = int(cfg.options.get("k", ceil_half(cfg.q)))
    S = ctx.spectrum(cutoff=EnergyIntervals(k, ctx.u).I_le_q.upper)
    return [_record(cfg, index, ell, "tail_event",
                    float(tail_probability_probe(S, k, int(ell), cfg.delta)))
            for ell in cfg.grid]


def _policy(cfg):
    from .approximant import GeometryPolicy
    if isinstance(cfg.policy, dict):
        return GeometryPolicy(**cfg.policy)
    return GeometryPolicy.named(cfg.policy)


def _observable(ctx):
    c = _centre(ctx.region)
    X = ChainRegion(c, c)
    return X, build_diagonal("number", X, ambient=ctx.region)


def run_propagate(cfg, index):
    """``||(tau_t(T) - T_t)_{P_{I<=q}}||`` for ``T`` the centre occupation."""
    from .approximant import build_approximant_top
    ctx = _context(cfg, index)
    policy = _policy(cfg)
    X, T = _observable(ctx)
    out = []
    for ell in cfg.grid:
        rep = build_approximant_top(T, X, cfg.q, int(ell), cfg.t, ctx, policy)
        sup = rep.support
        out.append(_record(cfg, index, ell, "propagation_error", rep.error,
                           radius=rep.plan.info["radius"], branch=rep.branch,
                           support=[sup.min, sup.max], policy_override=policy.override))
    return out


def run_matrix_element(cfg, index):
    """Matrix-element error between random configurations of equal particle number."""
    from .approximant import matrix_element_approximant
    ctx = _context(cfg, index)
    rng = sample_rng(cfg.seed, index, 1)
    policy = _policy(cfg)
    X, T = _observable(ctx)
    reg = ctx.region
    n = int(cfg.options.get("particles", 1))
    out = []
    for ell in cfg.grid:
        M1 = reg.sites(sorted(rng.choice(list(reg), n, replace=False).tolist()))
        M2 = reg.sites(sorted(rng.choice(list(reg), n, replace=False).tolist()))
        res = matrix_element_approximant(ctx, T, X, cfg.q, int(ell), cfg.t, M1, M2,
                                         alpha=cfg.options.get("alpha", 1.0),
                                         r=cfg.options.get("r"), policy=policy)
        out.append(_record(cfg, index, ell, "matrix_element_error", res.error,
                           branch=res.branch, r=res.r, window_j=res.window_j))
    return out


EXPERIMENTS = {
    "quasiloc": Experiment("quasiloc", "dist", "resolvent_crossing", run_quasiloc,
                           "E ||P_-^A R_E P_+^B||^(1/4) against dist(A, B^c)"),
    "eigencorr": Experiment("eigencorr", "dist", "eigencorrelator", run_eigencorr,
                            "eigencorrelator bracket on I_<=q against dist(A, B^c)"),
    "ct-check": Experiment("ct-check", "dist", "ct_pass", run_ct_check,
                           "pass rate of the deterministic gapped-resolvent bound"),
    "multiprobe": Experiment("multiprobe", "ell", "multi_probe", run_multiprobe,
                             "E ||P_<=k prod P_-^{S_i}|| against the probe spacing"),
    "tailprob": Experiment("tailprob", "ell", "tail_event", run_tailprob,
                           "frequency of low energy states with many particles"),
    "propagate": Experiment("propagate", "ell", "propagation_error", run_propagate,
                            "E ||(tau_t(T) - T_t)_P|| of the localized approximant"),
    "matrix-element": Experiment("matrix-element", "ell", "matrix_element_error",
                                 run_matrix_element,
                                 "matrix-element error of the localized approximant"),
}


# --- running --------------------------------------------------------------

def _run_one(cfg_json: dict, index: int):
    cfg = EnsembleConfig.from_json(cfg_json)
    with threadpool_limits(limits=1):
        try:
            recs = EXPERIMENTS[cfg.experiment].run(cfg, index)
            return index, [r.to_json() for r in recs], None
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            return index, None, f"{type(exc).__name__}: {exc}"


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        n = requested
    else:
        n = int(os.environ.get(WORKERS_ENV, "1"))
    if n < 1:
        raise EnsembleError("worker count must be at least 1")
    return n


@dataclass
class GridPoint:
    x: float
    mean: float
    stderr: float
    n: int
    min: float
    max: float
    aux_mean: dict = field(default_factory=dict)


@dataclass
class EnsembleResult:
    config: dict
    points: list
    fit: dict | None
    failures: list
    records: list | None
    metadata: dict

    @property
    def statistic(self) -> str:
        return EXPERIMENTS[self.config["experiment"]].statistic

    def table(self) -> list[tuple]:
        return [(p.x, p.mean, p.stderr, p.n) for p in self.points]

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config": self.config,
                "statistic": self.statistic,
                "points": [asdict(p) for p in self.points], "fit": self.fit,
                "failures": self.failures, "records": self.records, "metadata": self.metadata}

    @classmethod
    def from_json(cls, data: dict) -> "EnsembleResult":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise SchemaError(f"result schema version {version} does not match "
                              f"supported version {SCHEMA_VERSION}")
        return cls(data["config"], [GridPoint(**p) for p in data["points"]], data["fit"],
                   data["failures"], data["records"], data["metadata"])


def aggregate(records: list[dict], axis: str, grid) -> list[GridPoint]:
    """Mean and standard error per grid value; numeric aux fields are averaged too."""
    points = []
    for x in grid:
        rows = sorted((r for r in records if r[axis] == x), key=lambda r: r["seed"])
        if not rows:
            continue
        v = np.array([r["value"] for r in rows])
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        aux = {}
        for key in rows[0]["aux"]:
            vals = [r["aux"][key] for r in rows]
            if all(isinstance(a, (int, float)) and not isinstance(a, bool) for a in vals):
                aux[key] = float(np.mean(vals))
        points.append(GridPoint(float(x), float(v.mean()), se, len(v), float(v.min()),
                                float(v.max()), aux))
    return points


def fit_decay(points) -> tuple[float, float, float]:
    """Fit ``mean ~ exp(intercept - theta x)``; returns ``(theta, intercept, half_width)``.

    With standard errors available the fit is weighted by ``mean / stderr``
    (the inverse error of ``log mean``) and the half-width is 1.96 times the
    slope's standard error; otherwise an ordinary fit is used.
    """
    pts = [(float(x), float(m), float(s)) for x, m, s in points]
    if len(pts) < 3:
        raise EnsembleError("fitting a decay rate needs at least 3 points")
    if any(m <= 0 for _, m, _ in pts):
        raise EnsembleError("nonpositive means cannot be fitted on a log scale; "
                            "report them as censored points")
    x = np.array([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    rel = np.array([p[2] / p[1] for p in pts])
    if np.all(rel > 0):
        coef, cov = np.polyfit(x, y, 1, w=1.0 / rel, cov="unscaled")
        return float(-coef[0]), float(coef[1]), float(1.96 * math.sqrt(cov[0, 0]))
    res = stats.linregress(x, y)
    return float(-res.slope), float(res.intercept), float(1.96 * res.stderr)


def _fit_points(points: list[GridPoint]) -> dict | None:
    positive = [p for p in points if p.mean > 0]
    censored = [p.x for p in points if p.mean <= 0]
    if len(positive) < 3:
        return {"theta": None, "intercept": None, "half_width": None, "censored": censored,
                "reason": "fewer than 3 positive points"}
    theta, icpt, hw = fit_decay([(p.x, p.mean, p.stderr) for p in positive])
    return {"theta": theta, "intercept": icpt, "half_width": hw, "censored": censored}


def run_experiment(config: EnsembleConfig, workers: int | None = None,
                   keep_records: bool = True) -> EnsembleResult:
    """Run every sample, merge by index and aggregate over the grid."""
    n_workers = worker_count(workers)
    start = time.perf_counter()
    cfg_json = config.to_json()
    indices = range(config.samples)
    if n_workers == 1:
        outcomes = [_run_one(cfg_json, i) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outcomes = list(pool.map(_run_one, [cfg_json] * config.samples, indices))
    outcomes.sort(key=lambda o: o[0])
    failures = [{"index": i, "error": err} for i, _, err in outcomes if err is not None]
    if len(failures) > MAX_FAILURE_FRACTION * config.samples:
        raise EnsembleError(f"{len(failures)} of {config.samples} samples failed; first: "
                            f"{failures[0]['error']}")
    records = [r for _, recs, err in outcomes if err is None for r in recs]
    points = aggregate(records, config.axis, config.grid)
    fit = _fit_points(points) if config.experiment in ("quasiloc", "eigencorr", "multiprobe",
                                                       "propagate") else None
    meta = {"config_hash": config.digest(), "code_version": CODE_VERSION,
            "n_failures": len(failures),
            "timestamp": {"created": datetime.now(timezone.utc).isoformat(),
                          "wall_seconds": time.perf_counter() - start,
                          "workers": n_workers}}
    return EnsembleResult(cfg_json, points, fit, failures, records if keep_records else None,
                          meta)


# --- persistence ----------------------------------------------------------

def dumps(result: EnsembleResult) -> str:
    return json.dumps(result.to_json(), sort_keys=True, indent=2) + "\n"


def write_csv(result: EnsembleResult, path) -> Path:
    """One row per grid point: abscissa, mean, stderr, n."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([EXPERIMENTS[result.config["experiment"]].axis, "mean", "stderr", "n"])
            for p in result.points:
                w.writerow([repr(p.x), repr(p.mean), repr(p.stderr), p.n])
    except OSError as exc:
        raise PersistError(f"cannot write {path}: {exc}") from exc
    return path


def persist(result: EnsembleResult, path) -> tuple[Path, Path]:
    """Write the JSON result and its CSV table next to it."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(result))
    except OSError as exc:
        raise PersistError(f"cannot write {path}: {exc}") from exc
    return path, write_csv(result, path.with_suffix(".csv"))


def load(path) -> EnsembleResult:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise PersistError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PersistError(f"{path} is not valid JSON: {exc}") from exc
    return EnsembleResult.from_json(data)
