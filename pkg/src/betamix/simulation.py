"""Synthetic correlation structures, the end-to-end pipeline, and TPR/FDR scoring."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.stats import norm

from .angles import DataMatrix, pairwise_z, standardize
from .exceptions import InputError, NumericError
from .graph import Graph, bayes_edges
from .mixture import FitOptions, fit

__all__ = [
    "KINDS",
    "DESIGNS",
    "CorrelationSpec",
    "CorrelationModel",
    "Scenario",
    "ScenarioResult",
    "build_correlation",
    "repair_correlation",
    "sample_mvn",
    "sample_linear_model",
    "evaluate",
    "run_scenario",
    "parse_scenarios",
    "format_results",
]

log = logging.getLogger(__name__)

KINDS = ("clusters", "random_clusters", "band", "cycle", "ar1", "block_ar1", "hub", "linear_model", "identity")
DESIGNS = ("independent", "ar1_block", "hub_block")
EIG_FLOOR = 1e-6
N_RANDOM_CLUSTERS = 40
# linear model: intercept, then (predictor index, coefficient); predictors are 0-based
LM_INTERCEPT = 1.6
LM_TERMS = ((0, 6.0), (29, 4.0), (99, 3.0))
LM_CORRELATED = 15


@dataclass(frozen=True)
class CorrelationSpec:
    """A correlation structure on P variables.

    ``size_param`` is the cluster size, band width, cycle length, hub size or
    AR block size depending on ``kind``. For ``linear_model`` P counts the
    predictors; the response is appended as an extra variable.
    """

    kind: str
    P: int
    rho: float = 0.0
    size_param: int = 0
    seed: int = 0
    design: str = "independent"
    noise_sd: float = 0.1
    # ar1 only: pairs with |rho|^|i-k| below this are not counted as true edges
    truth_min_abs: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown structure {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.P < 2:
            raise InputError("P must be at least 2")
        if not -1.0 < self.rho < 1.0:
            raise InputError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.kind in ("clusters", "band", "cycle", "hub", "block_ar1"):
            if not 1 <= self.size_param <= self.P:
                raise InputError(f"{self.kind} needs 1 <= size_param <= P, got {self.size_param}")
        if self.kind == "cycle" and self.size_param < 3:
            raise InputError("a cycle needs length at least 3")
        if self.kind == "random_clusters" and 5 * N_RANDOM_CLUSTERS > self.P:
            raise InputError(f"random_clusters needs P >= {5 * N_RANDOM_CLUSTERS}")
        if self.kind == "linear_model":
            if self.P < 100:
                raise InputError("linear_model needs P >= 100")
            if self.design not in DESIGNS:
                raise InputError(f"unknown design {self.design!r}; choose from {', '.join(DESIGNS)}")
            if not self.noise_sd >= 0:
                raise InputError("noise_sd must be non-negative")

    @property
    def settings(self) -> str:
        k = self.kind
        if k == "clusters":
            return f"Cluster size {self.size_param}"
        if k == "band":
            return f"Width {self.size_param}"
        if k == "cycle":
            return f"Length {self.size_param}"
        if k == "hub":
            return f"Hub size {self.size_param}"
        if k == "block_ar1":
            return f"AR(1) block {self.size_param}"
        if k == "random_clusters":
            return f"{N_RANDOM_CLUSTERS} random clusters"
        if k == "linear_model":
            return f"Design {self.design}"
        return k


@dataclass(frozen=True)
class CorrelationModel:
    """Target correlation matrix (after any repair) and the true edge set as (i, k), i < k."""

    corr: np.ndarray
    truth: frozenset
    repaired: bool = False
    min_eigenvalue: float = math.nan


def _block_starts(P, size):
    return [(s, min(s + size, P)) for s in range(0, P, size)]


def _random_cluster_sizes(P, rng):
    hi = max(5, (2 * P) // N_RANDOM_CLUSTERS)
    sizes = rng.integers(5, hi + 1, size=N_RANDOM_CLUSTERS)
    while sizes.sum() > P:
        sizes[np.argmax(sizes)] -= 1
    return sizes


def repair_correlation(corr):
    """Nearest-PD fix: clip eigenvalues at 1e-6, then rescale to a unit diagonal.

    Returns (matrix, repaired, smallest original eigenvalue).
    """
    corr = 0.5 * (corr + corr.T)
    vals, vecs = np.linalg.eigh(corr)
    lam_min = float(vals[0])
    if lam_min >= EIG_FLOOR:
        return corr, False, lam_min
    fixed = (vecs * np.maximum(vals, EIG_FLOOR)) @ vecs.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return 0.5 * (fixed + fixed.T), True, lam_min


def _target(spec: CorrelationSpec):
    P, rho, s = spec.P, spec.rho, spec.size_param
    C = np.eye(P)
    truth_mask = np.zeros((P, P), dtype=bool)
    kind = spec.kind
    if kind == "clusters":
        for a, b in _block_starts(P, s):
            C[a:b, a:b] = rho
            truth_mask[a:b, a:b] = True
    elif kind == "random_clusters":
        sizes = _random_cluster_sizes(P, np.random.default_rng(spec.seed))
        a = 0
        for size in sizes:
            C[a:a + size, a:a + size] = rho
            truth_mask[a:a + size, a:a + size] = True
            a += size
    elif kind == "band":
        lag = np.abs(np.subtract.outer(np.arange(P), np.arange(P)))
        truth_mask = (lag > 0) & (lag <= s)
        C[truth_mask] = rho
    elif kind == "cycle":
        for a, b in _block_starts(P, s):
            L = b - a
            if L < 3:
                continue
            for t in range(L):
                i, k = a + t, a + (t + 1) % L
                C[i, k] = C[k, i] = rho
                truth_mask[i, k] = truth_mask[k, i] = True
    elif kind in ("ar1", "block_ar1"):
        m = P if kind == "ar1" else s
        lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
        block = rho ** lag.astype(float)
        C[:m, :m] = block
        truth_mask[:m, :m] = np.abs(block) >= spec.truth_min_abs if kind == "ar1" else block != 0
    elif kind == "hub":
        for a, b in _block_starts(P, s):
            C[a, a + 1:b] = C[a + 1:b, a] = rho
            truth_mask[a, a + 1:b] = truth_mask[a + 1:b, a] = True
    elif kind == "identity":
        pass
    else:
        raise InputError(f"build_correlation does not handle {kind!r}; use sample_linear_model")
    np.fill_diagonal(C, 1.0)
    np.fill_diagonal(truth_mask, False)
    if rho == 0:
        truth_mask[:] = False
    return C, truth_mask


def build_correlation(spec: CorrelationSpec) -> CorrelationModel:
    """Correlation matrix and ground-truth edges for ``spec``.

    The truth is every pair given a nonzero correlation by the structure,
    even when the matrix had to be repaired to make it positive definite;
    repairs are logged.
    """
    C, mask = _target(spec)
    C, repaired, lam_min = repair_correlation(C)
    if repaired:
        log.warning(
            "%s structure (P=%d, rho=%g, size=%d) is not positive definite "
            "(smallest eigenvalue %.3g); clipped eigenvalues at %g",
            spec.kind, spec.P, spec.rho, spec.size_param, lam_min, EIG_FLOOR,
        )
    I, K = np.nonzero(np.triu(mask, 1))
    return CorrelationModel(corr=C, truth=frozenset(zip(I.tolist(), K.tolist())), repaired=repaired, min_eigenvalue=lam_min)


def _cholesky(corr):
    try:
        return np.linalg.cholesky(corr)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"Cholesky factorisation failed: {exc}") from exc


def sample_mvn(corr, n: int, seed: int, names=None) -> DataMatrix:
    """n independent N(0, corr) rows, generated as Z L^T with corr = L L^T."""
    L = _cholesky(np.asarray(corr, dtype=float))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, L.shape[0])) @ L.T
    return DataMatrix(values=x, column_names=list(names or []))


def _design_corr(design, rho):
    m = LM_CORRELATED
    if design == "ar1_block":
        lag = np.abs(np.subtract.outer(np.arange(m), np.arange(m)))
        return rho ** lag.astype(float)
    C = np.eye(m)
    C[0, 1:] = C[1:, 0] = rho
    return C


def sample_linear_model(P: int, n: int, seed: int, design: str = "independent", rho: float = 0.0, noise_sd: float = 0.1):
    """Uniform predictors X1..XP and Y = 1.6 + 6 X1 + 4 X30 + 3 X100 + N(0, noise_sd^2).

    For the correlated designs the first 15 predictors come from a Gaussian
    copula (AR(1) with parameter rho, or a hub centred on X1) pushed through
    the normal CDF, so their margins stay uniform. Returns the n x (P + 1)
    matrix with Y last, and the true edge set {(0, P), (29, P), (99, P)}.
    """
    if P < 100:
        raise InputError("linear_model needs P >= 100")
    if design not in DESIGNS:
        raise InputError(f"unknown design {design!r}")
    rng = np.random.default_rng(seed)
    X = rng.random((n, P))
    if design != "independent":
        C, repaired, lam = repair_correlation(_design_corr(design, rho))
        if repaired:
            log.warning("%s design with rho=%g repaired (smallest eigenvalue %.3g)", design, rho, lam)
        g = rng.standard_normal((n, LM_CORRELATED)) @ _cholesky(C).T
        X[:, :LM_CORRELATED] = norm.cdf(g)
    y = LM_INTERCEPT + sum(coef * X[:, j] for j, coef in LM_TERMS) + noise_sd * rng.standard_normal(n)
    names = [f"X{j + 1}" for j in range(P)] + ["Y"]
    truth = frozenset((j, P) for j, _ in LM_TERMS)
    return DataMatrix(values=np.column_stack([X, y]), column_names=names), truth


def _keys(pairs, P):
    if not pairs:
        return np.empty(0, dtype=np.int64)
    arr = np.asarray(sorted(pairs), dtype=np.int64)
    return arr[:, 0] * P + arr[:, 1]


def evaluate(detected: Graph, truth, node=None) -> dict:
    """Score detected edges against the truth.

    With ``node`` set, only edges touching that node are scored (used for
    response-variable selection). FDR is fp / max(1, tp + fp); TPR is NaN
    when the truth is empty.
    """
    P = detected.P
    I, K = detected.i, detected.k
    truth = set(truth)
    if node is not None:
        keep = (I == node) | (K == node)
        I, K = I[keep], K[keep]
        truth = {e for e in truth if node in e}
    det = np.unique(I * P + K)
    tru = _keys(truth, P)
    tp = int(np.intersect1d(det, tru, assume_unique=True).size)
    fp = int(det.size - tp)
    fn = int(tru.size - tp)
    tpr = tp / (tp + fn) if tp + fn else math.nan
    return {"tp": tp, "fp": fp, "fn": fn, "tpr": tpr, "fdr": fp / max(1, tp + fp)}


@dataclass(frozen=True)
class Scenario:
    """One simulation configuration: structure, sample size, repetitions and fit settings."""

    spec: CorrelationSpec
    n: int
    reps: int = 5
    tau: float = 0.01
    center: bool = True
    options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if self.n < 3:
            raise InputError("n must be at least 3")
        if self.reps < 1:
            raise InputError("reps must be at least 1")


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    tpr: float
    fdr: float
    reps: int
    per_rep: list
    repaired: bool = False


def _one_rep(scenario: Scenario, rep: int, model: CorrelationModel | None, threads: int) -> dict:
    spec = scenario.spec
    seed = spec.seed + rep
    if spec.kind == "linear_model":
        data, truth = sample_linear_model(spec.P, scenario.n, seed, spec.design, spec.rho, spec.noise_sd)
        node = spec.P
    else:
        data, truth, node = sample_mvn(model.corr, scenario.n, seed), model.truth, None
    zv = pairwise_z(standardize(data, center=scenario.center), threads=threads)
    result = fit(zv, scenario.options)
    g = bayes_edges(zv, result.posteriors, scenario.tau)
    score = evaluate(g, truth, node=node)
    score.update(threshold=g.threshold, converged=result.converged, seed=seed)
    return score


def run_scenario(scenario: Scenario, threads: int = 1) -> ScenarioResult:
    """Simulate ``scenario.reps`` datasets (seed = spec.seed + rep) and average TPR and FDR.

    Each rep runs sample -> standardize -> pairwise z -> EM fit -> Bayes
    edges -> scoring. Reps are independent; with ``threads`` > 1 they run
    concurrently and the result is unchanged.
    """
    spec = scenario.spec
    model = None if spec.kind == "linear_model" else build_correlation(spec)
    reps = range(scenario.reps)
    if threads > 1 and scenario.reps > 1:
        with ThreadPoolExecutor(max_workers=min(threads, scenario.reps)) as pool:
            per_rep = list(pool.map(lambda r: _one_rep(scenario, r, model, 1), reps))
    else:
        per_rep = [_one_rep(scenario, r, model, 1) for r in reps]
    tprs = [s["tpr"] for s in per_rep]
    tpr = math.nan if any(math.isnan(t) for t in tprs) else float(np.mean(tprs))
    return ScenarioResult(
        scenario=scenario,
        tpr=tpr,
        fdr=float(np.mean([s["fdr"] for s in per_rep])),
        reps=scenario.reps,
        per_rep=per_rep,
        repaired=bool(model is not None and model.repaired),
    )


_SPEC_FIELDS = {f.name: f.type for f in fields(CorrelationSpec)}
_OPTION_FIELDS = {f.name for f in fields(FitOptions)}
_INT_KEYS = {"P", "size_param", "seed", "n", "reps", "max_iter"}
_FLOAT_KEYS = {"rho", "noise_sd", "truth_min_abs", "tau", "delta", "tol"}
_BOOL_KEYS = {"center", "estimate_ess", "estimate_c_delta", "update_c_delta_each_iter", "guard_c_delta"}


def _coerce(key, value):
    if key in _INT_KEYS:
        return int(value)
    if key in _FLOAT_KEYS:
        return float(value)
    if key in _BOOL_KEYS:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("1", "true", "yes", "on"):
            return True
        if text in ("0", "false", "no", "off"):
            return False
        raise InputError(f"{key}: expected a boolean, got {value!r}")
    return str(value).strip()


def _scenario_from_dict(d: dict, defaults: dict | None = None) -> Scenario:
    d = {**(defaults or {}), **d}
    # accept a few spelled-out aliases
    aliases = {"structure": "kind", "N": "n", "size": "size_param", "cdelta": "estimate_c_delta", "ess": "estimate_ess"}
    d = {aliases.get(k, k): v for k, v in d.items()}
    unknown = set(d) - set(_SPEC_FIELDS) - _OPTION_FIELDS - {"n", "reps", "tau", "center"}
    if unknown:
        raise InputError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    try:
        vals = {k: _coerce(k, v) for k, v in d.items()}
    except ValueError as exc:
        raise InputError(f"bad scenario value: {exc}") from None
    if "kind" not in vals or "P" not in vals or "n" not in vals:
        raise InputError("a scenario needs at least kind, P and n")
    vals["kind"] = vals["kind"].lower()
    spec = CorrelationSpec(**{k: v for k, v in vals.items() if k in _SPEC_FIELDS})
    options = FitOptions(**{k: v for k, v in vals.items() if k in _OPTION_FIELDS})
    extra = {k: vals[k] for k in ("reps", "tau", "center") if k in vals}
    return Scenario(spec=spec, n=vals["n"], options=options, **extra)


def parse_scenarios(text: str, defaults: dict | None = None) -> list:
    """Parse scenario definitions from JSON or key=value text.

    JSON may be one object, a list of objects, or {"scenarios": [...]} with
    optional shared "defaults". In key=value text, blank lines separate
    scenarios and '#' starts a comment.
    """
    stripped = text.strip()
    if not stripped:
        raise InputError("empty scenario configuration")
    if stripped[0] in "[{":
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise InputError(f"invalid JSON scenario file: {exc}") from None
        if isinstance(obj, dict) and "scenarios" in obj:
            defaults = {**(defaults or {}), **obj.get("defaults", {})}
            obj = obj["scenarios"]
        items = obj if isinstance(obj, list) else [obj]
        return [_scenario_from_dict(item, defaults) for item in items]

    blocks, current = [], {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            if current:
                blocks.append(current)
                current = {}
            continue
        if "=" not in line:
            raise InputError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        current[key] = value
    if current:
        blocks.append(current)
    return [_scenario_from_dict(b, defaults) for b in blocks]


def _fmt(x, spec):
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else format(x, spec)


def format_results(results) -> str:
    """Comma-delimited table: structure, rho, N, P, settings, TPR, FDR."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["structure", "rho", "N", "P", "settings", "TPR", "FDR"])
    for res in results:
        s = res.scenario
        w.writerow([s.spec.kind, _fmt(s.spec.rho, "g"), s.n, s.spec.P, s.spec.settings, _fmt(res.tpr, ".3f"), _fmt(res.fdr, ".2e")])
    return buf.getvalue()
