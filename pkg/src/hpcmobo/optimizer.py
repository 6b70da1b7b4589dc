"""Optimization engines over the discrete node-count domain.

MOBO proposes one candidate per iteration by Monte-Carlo q=1 log expected
hypervolume improvement under two independent GP posteriors; SOBO runs
closed-form log expected improvement on a single objective; the random
baseline spends a matched budget of uniform draws split across seeds. All
methods start from the same 4-point space-filling initial design and evaluate
objectives against frozen surrogates, which stand in for the machine.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from scipy.stats import norm, qmc

from .core import ConfigError, DataError, NumericalError, ObjectiveSample, RunConfig, validate_config
from .gp import GaussianProcess, fit_gp, gp_posterior
from .pareto import (
    ParetoFront,
    hypervolume,
    hypervolume_improvement,
    infer_reference,
    nondominated,
    spread,
)

ACQ_EPS = 1e-12
EXHAUSTIVE_LIMIT = 4096
METHOD_MOBO = "MOBO"
METHOD_SOBO_RUNTIME = "SOBO (Runtime)"
METHOD_SOBO_POWER = "SOBO (Power)"
METHOD_RANDOM = "Random"
ALL_METHODS = (METHOD_MOBO, METHOD_SOBO_RUNTIME, METHOD_SOBO_POWER, METHOD_RANDOM)


class ObjectiveSurrogate(Protocol):
    """Anything that predicts one objective from a raw feature row."""

    feature_names: list[str]
    design_feature: str
    design_bounds: tuple[int, int]

    def predict(self, X: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class JobContext:
    """The fixed feature vector of the job whose node count is being tuned."""

    feature_names: tuple[str, ...]
    values: np.ndarray
    design_feature: str

    def row_for(self, node_count: int) -> np.ndarray:
        row = np.asarray(self.values, dtype=float).copy()
        row[self.feature_names.index(self.design_feature)] = float(node_count)
        return row


@dataclass(frozen=True)
class CandidateSet:
    """All integer node counts in [min, max] plus the fixed job context."""

    node_counts: np.ndarray
    context: JobContext

    def __post_init__(self) -> None:
        if len(self.node_counts) == 0:
            raise ConfigError("candidate set must be non-empty")

    @property
    def bounds(self) -> tuple[int, int]:
        return (int(self.node_counts.min()), int(self.node_counts.max()))

    @classmethod
    def from_bounds(cls, lo: int, hi: int, context: JobContext) -> "CandidateSet":
        if hi < lo:
            raise ConfigError(f"empty node range [{lo}, {hi}]")
        return cls(np.arange(lo, hi + 1, dtype=int), context)


def evaluate_objectives(surr_runtime: ObjectiveSurrogate, surr_power: ObjectiveSurrogate,
                        node_count: int, context: JobContext) -> tuple[float, float]:
    """Predict (runtime, power) for one design point from the frozen surrogates."""
    lo, hi = surr_runtime.design_bounds
    if not (lo <= node_count <= hi):
        raise DataError(f"node count {node_count} outside design bounds [{lo}, {hi}]")
    for surr in (surr_runtime, surr_power):
        if len(context.feature_names) != len(surr.feature_names):
            raise DataError(
                f"context has {len(context.feature_names)} features but surrogate "
                f"expects {len(surr.feature_names)}"
            )
    row = context.row_for(node_count)[None, :]
    return (float(surr_runtime.predict(row)[0]), float(surr_power.predict(row)[0]))


@dataclass(frozen=True)
class ObjectiveGP:
    """GP over node count for one objective, optionally modeling log targets."""

    gp: GaussianProcess
    log_space: bool

    def posterior(self, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(nodes, dtype=float)[:, None]
        return gp_posterior(self.gp, X)


def fit_objective_gp(nodes: Sequence[int], values: Sequence[float],
                     log_space: bool = False) -> ObjectiveGP:
    """Refit helper used once per optimizer iteration. Duplicate node counts
    collapse to their first observation (evaluations are deterministic)."""
    nodes = np.asarray(nodes, dtype=float)
    values = np.asarray(values, dtype=float)
    _, keep = np.unique(nodes, return_index=True)
    nodes = nodes[np.sort(keep)]
    values = values[np.sort(keep)]
    use_log = log_space and bool((values > 0).all())
    y = np.log(values) if use_log else values
    gp = fit_gp(nodes[:, None], y, restarts=4)
    return ObjectiveGP(gp=gp, log_space=use_log)


def _base_normals(mc_samples: int, seed) -> np.ndarray:
    """Low-discrepancy standard-normal pairs: scrambled Sobol through the
    Gaussian inverse CDF."""
    sob = qmc.Sobol(d=2, scramble=True, seed=seed)
    if mc_samples & (mc_samples - 1) == 0:
        u = sob.random_base2(int(math.log2(mc_samples)))
    else:
        u = sob.random(mc_samples)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    return norm.ppf(u)


def _deterministic_hvi(mu_r: float, mu_p: float, gp_runtime: ObjectiveGP,
                       gp_power: ObjectiveGP, front: ParetoFront, ref) -> float:
    y_r = math.exp(mu_r) if gp_runtime.log_space else mu_r
    y_p = math.exp(mu_p) if gp_power.log_space else mu_p
    return float(hypervolume_improvement(front, np.asarray(ref, dtype=float),
                                         np.array([[y_r, y_p]]))[0])


def _ehvi_samples(gp_runtime: ObjectiveGP, gp_power: ObjectiveGP, node_count: int,
                  front: ParetoFront, ref, z: np.ndarray) -> np.ndarray:
    nodes = np.array([node_count])
    mu_r, var_r = gp_runtime.posterior(nodes)
    mu_p, var_p = gp_power.posterior(nodes)
    y_r = mu_r[0] + math.sqrt(var_r[0]) * z[:, 0]
    y_p = mu_p[0] + math.sqrt(var_p[0]) * z[:, 1]
    if gp_runtime.log_space:
        y_r = np.exp(y_r)
    if gp_power.log_space:
        y_p = np.exp(y_p)
    return hypervolume_improvement(front, np.asarray(ref, dtype=float),
                                   np.column_stack([y_r, y_p]))


def ehvi_samples(gp_runtime: ObjectiveGP, gp_power: ObjectiveGP, node_count: int,
                 front: ParetoFront, ref, mc_samples: int, seed) -> np.ndarray:
    """Per-sample hypervolume improvements backing log_ehvi; exposed so tests
    can form Monte-Carlo standard errors."""
    z = _base_normals(mc_samples, seed)
    return _ehvi_samples(gp_runtime, gp_power, node_count, front, ref, z)


def log_ehvi(gp_runtime: ObjectiveGP, gp_power: ObjectiveGP, node_count: int,
             front: ParetoFront, ref, mc_samples: int, seed) -> float:
    """log(mean HVI + eps) at one candidate. A zero-variance candidate is a
    deterministic sample: it reduces to log(HVI(posterior mean) + eps)
    exactly, independent of mc_samples."""
    nodes = np.array([node_count])
    mu_r, var_r = gp_runtime.posterior(nodes)
    mu_p, var_p = gp_power.posterior(nodes)
    if var_r[0] == 0.0 and var_p[0] == 0.0:
        hvi = _deterministic_hvi(mu_r[0], mu_p[0], gp_runtime, gp_power, front, ref)
        return math.log(hvi + ACQ_EPS)
    samples = ehvi_samples(gp_runtime, gp_power, node_count, front, ref,
                           mc_samples, seed)
    return math.log(float(samples.mean()) + ACQ_EPS)


def _log_ehvi_over(nodes: np.ndarray, gp_r: ObjectiveGP, gp_p: ObjectiveGP,
                   front: ParetoFront, ref, z: np.ndarray) -> np.ndarray:
    """Batched acquisition over a node array, sharing one base-normal draw
    (common random numbers across candidates within an iteration)."""
    mu_r, var_r = gp_r.posterior(nodes)
    mu_p, var_p = gp_p.posterior(nodes)
    sd_r = np.sqrt(var_r)
    sd_p = np.sqrt(var_p)
    out = np.empty(len(nodes))
    for i in range(len(nodes)):
        if sd_r[i] == 0.0 and sd_p[i] == 0.0:
            hvi_det = _deterministic_hvi(mu_r[i], mu_p[i], gp_r, gp_p, front, ref)
            out[i] = math.log(hvi_det + ACQ_EPS)
            continue
        y_r = mu_r[i] + sd_r[i] * z[:, 0]
        y_p = mu_p[i] + sd_p[i] * z[:, 1]
        if gp_r.log_space:
            y_r = np.exp(y_r)
        if gp_p.log_space:
            y_p = np.exp(y_p)
        hvi = hypervolume_improvement(front, ref, np.column_stack([y_r, y_p]))
        out[i] = math.log(float(hvi.mean()) + ACQ_EPS)
    return out


def expected_improvement(mean: np.ndarray, var: np.ndarray,
                         incumbent: float) -> np.ndarray:
    """Closed-form EI for minimization; deterministic candidates degrade to
    max(incumbent - mean, 0)."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    sigma = np.sqrt(np.maximum(var, 0.0))
    ei = np.maximum(incumbent - mean, 0.0)
    pos = sigma > 0
    if pos.any():
        u = (incumbent - mean[pos]) / sigma[pos]
        ei[pos] = sigma[pos] * (u * norm.cdf(u) + norm.pdf(u))
    return ei


@dataclass
class HistoryEntry:
    iteration: int
    node_count: int
    runtime: float
    power: float
    hv_so_far: float
    spread_so_far: float
    acquisition: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ParetoReport:
    """Outcome of one optimizer run: nondominated set, metrics, and history."""

    method: str
    config: RunConfig
    context: JobContext
    observations: list[ObjectiveSample]
    front: ParetoFront
    front_nodes: list[int]
    front_found_at: list[int]
    ref: tuple[float, float]
    hv: float
    spread: float
    spread_method: str
    history: list[HistoryEntry]
    n_initial: int
    budget: dict = field(default_factory=dict)
    per_seed: list["ParetoReport"] = field(default_factory=list)

    @property
    def n_evaluations(self) -> int:
        return len(self.observations)


@dataclass
class OptimizerState:
    """Mutable loop state owned by a single run."""

    observed: list[ObjectiveSample]
    history: list[HistoryEntry]
    gp_runtime: ObjectiveGP | None = None
    gp_power: ObjectiveGP | None = None
    ref: tuple[float, float] | None = None

    def objective_array(self) -> np.ndarray:
        return np.array([s.y for s in self.observed], dtype=float)


def initial_design(lo: int, hi: int) -> list[int]:
    """Min, max, and two evenly spaced interior node counts (deduplicated)."""
    span = hi - lo
    raw = [lo, lo + span // 3, lo + (2 * span) // 3, hi]
    return sorted(set(raw))


def _require_searchable(candidates: CandidateSet) -> None:
    # the per-iteration GP refit needs at least two distinct design points
    if len(np.unique(candidates.node_counts)) < 2:
        raise ConfigError(
            "GP-based optimizers need at least 2 distinct candidate node counts; "
            "use the random baseline for a single-point domain"
        )


def _finalize_report(method: str, cfg: RunConfig, context: JobContext,
                     state: OptimizerState, n_initial: int,
                     spread_method: str = "polyline",
                     budget: dict | None = None,
                     per_seed: list[ParetoReport] | None = None) -> ParetoReport:
    Y = state.objective_array()
    ref = infer_reference(Y)
    front = nondominated(Y)
    front_nodes, front_found_at = _nodes_for_front(front, state.observed)
    return ParetoReport(
        method=method,
        config=cfg,
        context=context,
        observations=list(state.observed),
        front=front,
        front_nodes=front_nodes,
        front_found_at=front_found_at,
        ref=ref,
        hv=hypervolume(front, ref),
        spread=spread(front, spread_method),
        spread_method=spread_method,
        history=list(state.history),
        n_initial=n_initial,
        budget=budget or {},
        per_seed=per_seed or [],
    )


def _nodes_for_front(front: ParetoFront,
                     observed: list[ObjectiveSample]) -> tuple[list[int], list[int]]:
    """Node count and first-observation index for each front point."""
    nodes = []
    found_at = []
    for point in front.points:
        for i, sample in enumerate(observed):
            if sample.y == point:
                nodes.append(sample.node_count)
                found_at.append(i)
                break
        else:
            nodes.append(-1)
            found_at.append(-1)
    return nodes, found_at


def _observe(state: OptimizerState, surr_r, surr_p, node: int,
             context: JobContext) -> ObjectiveSample:
    runtime, power = evaluate_objectives(surr_r, surr_p, node, context)
    sample = ObjectiveSample(node_count=node, context=context.values,
                             runtime=runtime, power=power)
    state.observed.append(sample)
    return sample


def _record(state: OptimizerState, iteration: int, sample: ObjectiveSample,
            acq: float, spread_method: str) -> None:
    Y = state.objective_array()
    ref = infer_reference(Y)
    front = nondominated(Y)
    state.history.append(HistoryEntry(
        iteration=iteration,
        node_count=sample.node_count,
        runtime=sample.runtime,
        power=sample.power,
        hv_so_far=hypervolume(front, ref),
        spread_so_far=spread(front, spread_method),
        acquisition=acq,
    ))


def _pick_candidate(nodes: np.ndarray, acq: np.ndarray, observed_nodes: set[int],
                    rng: np.random.Generator) -> tuple[int, float]:
    """Argmax with smallest-node tie-breaking; when the acquisition ties at
    the log-eps floor everywhere, fall back to a random unobserved candidate."""
    floor = math.log(ACQ_EPS)
    best = float(acq.max())
    if best <= floor + 1e-9:
        unobserved = np.array([n for n in nodes if int(n) not in observed_nodes])
        if len(unobserved):
            return int(rng.choice(unobserved)), best
        return int(nodes.min()), best
    winners = nodes[acq == best]
    return int(winners.min()), best


def _acq_nodes_mobo(candidates: CandidateSet, gp_r, gp_p, front, ref, z,
                    cfg: RunConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    nodes = candidates.node_counts
    if len(nodes) <= EXHAUSTIVE_LIMIT:
        return nodes, _log_ehvi_over(nodes, gp_r, gp_p, front, ref, z)
    # restart-based discrete search with local +-1 hill climbing
    node_set = set(int(n) for n in nodes)
    seen: dict[int, float] = {}

    def acq_of(n: int) -> float:
        if n not in seen:
            seen[n] = float(_log_ehvi_over(np.array([n]), gp_r, gp_p, front, ref, z)[0])
        return seen[n]

    for _ in range(cfg.acq_restarts):
        raw = rng.choice(nodes, size=min(cfg.raw_candidates, len(nodes)), replace=False)
        best_n = max((int(n) for n in raw), key=acq_of)
        for _ in range(200):
            neighbors = [best_n - 1, best_n + 1]
            improved = False
            for nb in neighbors:
                if nb in node_set and acq_of(nb) > acq_of(best_n):
                    best_n = nb
                    improved = True
            if not improved:
                break
    out_nodes = np.array(sorted(seen), dtype=int)
    return out_nodes, np.array([seen[int(n)] for n in out_nodes])


def mobo_run(surr_runtime: ObjectiveSurrogate, surr_power: ObjectiveSurrogate,
             candidates: CandidateSet, cfg: RunConfig,
             log_runtime_gp: bool = True, spread_method: str = "polyline") -> ParetoReport:
    """q=1 Monte-Carlo logEHVI loop over the candidate node counts."""
    validate_config(cfg)
    _require_searchable(candidates)
    state = OptimizerState(observed=[], history=[])
    rng = np.random.default_rng([cfg.seed, 11])
    init = initial_design(*candidates.bounds)
    for node in init:
        _observe(state, surr_runtime, surr_power, node, candidates.context)

    for it in range(cfg.mobo_iterations):
        Y = state.objective_array()
        try:
            gp_r = fit_objective_gp([s.node_count for s in state.observed], Y[:, 0],
                                    log_space=log_runtime_gp)
            gp_p = fit_objective_gp([s.node_count for s in state.observed], Y[:, 1])
        except NumericalError as exc:
            raise NumericalError(f"GP fit failed at MOBO iteration {it}: {exc}") from exc
        ref = np.asarray(infer_reference(Y), dtype=float)
        front = nondominated(Y)
        z = _base_normals(cfg.mc_samples, np.random.default_rng([cfg.seed, 7, it]))
        nodes, acq = _acq_nodes_mobo(candidates, gp_r, gp_p, front, ref, z, cfg, rng)
        observed_nodes = {s.node_count for s in state.observed}
        pick, best_acq = _pick_candidate(nodes, acq, observed_nodes, rng)
        sample = _observe(state, surr_runtime, surr_power, pick, candidates.context)
        _record(state, it, sample, best_acq, spread_method)

    return _finalize_report(METHOD_MOBO, cfg, candidates.context, state, len(init),
                            spread_method)


def sobo_run(surr_runtime: ObjectiveSurrogate, surr_power: ObjectiveSurrogate,
             candidates: CandidateSet, objective: str, cfg: RunConfig,
             log_runtime_gp: bool = True, spread_method: str = "polyline") -> ParetoReport:
    """Single-objective logEI loop; the untargeted objective is still recorded
    so the resulting point set carries HV and spread."""
    validate_config(cfg)
    if objective not in ("runtime", "power"):
        raise ConfigError(f"objective must be runtime or power, got {objective!r}")
    _require_searchable(candidates)
    state = OptimizerState(observed=[], history=[])
    rng = np.random.default_rng([cfg.seed, 13])
    init = initial_design(*candidates.bounds)
    for node in init:
        _observe(state, surr_runtime, surr_power, node, candidates.context)

    col = 0 if objective == "runtime" else 1
    method = METHOD_SOBO_RUNTIME if objective == "runtime" else METHOD_SOBO_POWER
    for it in range(cfg.mobo_iterations):
        Y = state.objective_array()
        values = Y[:, col]
        try:
            gp = fit_objective_gp([s.node_count for s in state.observed], values,
                                  log_space=log_runtime_gp and objective == "runtime")
        except NumericalError as exc:
            raise NumericalError(f"GP fit failed at SOBO iteration {it}: {exc}") from exc
        model_vals = np.log(values) if gp.log_space else values
        incumbent = float(model_vals.min())
        mean, var = gp.posterior(candidates.node_counts)
        acq = np.log(expected_improvement(mean, var, incumbent) + ACQ_EPS)
        observed_nodes = {s.node_count for s in state.observed}
        pick, best_acq = _pick_candidate(candidates.node_counts, acq, observed_nodes, rng)
        sample = _observe(state, surr_runtime, surr_power, pick, candidates.context)
        _record(state, it, sample, best_acq, spread_method)

    return _finalize_report(method, cfg, candidates.context, state, len(init),
                            spread_method)


def random_run(surr_runtime: ObjectiveSurrogate, surr_power: ObjectiveSurrogate,
               candidates: CandidateSet, cfg: RunConfig,
               spread_method: str = "polyline") -> ParetoReport:
    """Seed-split uniform search: floor(budget / seeds) draws per seed on top
    of the shared initial design, pooled into one report."""
    validate_config(cfg)
    state = OptimizerState(observed=[], history=[])
    init = initial_design(*candidates.bounds)
    for node in init:
        _observe(state, surr_runtime, surr_power, node, candidates.context)

    per_seed = cfg.mobo_iterations // cfg.random_seeds
    sub_reports: list[ParetoReport] = []
    it = 0
    for s in range(cfg.random_seeds):
        rng = np.random.default_rng([cfg.seed, 101, s])
        seed_state = OptimizerState(observed=[], history=[])
        for _ in range(per_seed):
            node = int(rng.choice(candidates.node_counts))
            sample = _observe(state, surr_runtime, surr_power, node, candidates.context)
            seed_state.observed.append(sample)
            _record(state, it, sample, math.nan, spread_method)
            it += 1
        if seed_state.observed:
            sub_reports.append(_finalize_report(
                f"{METHOD_RANDOM}[seed {s}]", cfg, candidates.context, seed_state,
                0, spread_method))
    budget = {
        "n_initial": len(init),
        "evaluations_per_seed": per_seed,
        "pooled_evaluations": per_seed * cfg.random_seeds,
        "total_evaluations": len(state.observed),
    }
    return _finalize_report(METHOD_RANDOM, cfg, candidates.context, state, len(init),
                            spread_method, budget=budget, per_seed=sub_reports)


def hv_history_under_ref(report: ParetoReport, ref) -> list[float]:
    """Recompute HV-so-far against one fixed reference point (the online
    inflating reference is reporting-only and not monotone)."""
    out = []
    Y: list[tuple[float, float]] = [s.y for s in report.observations[:report.n_initial]]
    for entry in report.history:
        Y.append((entry.runtime, entry.power))
        out.append(hypervolume(nondominated(Y), ref))
    return out


@dataclass
class ComparisonTable:
    """HV and spread per method under one shared reference point."""

    methods: list[str]
    hv: dict[str, float]
    spread: dict[str, float]
    ref: tuple[float, float]
    winner_hv: list[str]
    winner_spread: list[str]

    def to_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["Metric," + ",".join(self.methods)]
        lines.append("Hypervolume," + ",".join(repr(float(self.hv[m])) for m in self.methods))
        lines.append("Spread," + ",".join(repr(float(self.spread[m])) for m in self.methods))
        lines.append("WinnerHV," + ",".join(
            "1" if m in self.winner_hv else "0" for m in self.methods))
        lines.append("WinnerSpread," + ",".join(
            "1" if m in self.winner_spread else "0" for m in self.methods))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def compare_methods(reports: dict[str, ParetoReport],
                    spread_method: str = "polyline") -> ComparisonTable:
    """Re-measure every method against one shared reference inferred from the
    union of all observations. Higher HV wins; lower spread wins (tighter
    fronts read as more balanced trade-offs)."""
    if not reports:
        raise DataError("no reports to compare")
    union: list[tuple[float, float]] = []
    for rep in reports.values():
        union.extend(s.y for s in rep.observations)
    if not union:
        raise DataError("cannot compare methods with zero observations")
    ref = infer_reference(union)
    hv: dict[str, float] = {}
    spr: dict[str, float] = {}
    for name, rep in reports.items():
        front = nondominated([s.y for s in rep.observations]) if rep.observations else ParetoFront(())
        hv[name] = hypervolume(front, ref)
        spr[name] = spread(front, spread_method)
    best_hv = max(hv.values())
    best_spread = min(spr.values())
    return ComparisonTable(
        methods=list(reports),
        hv=hv,
        spread=spr,
        ref=ref,
        winner_hv=[m for m, v in hv.items() if v == best_hv],
        winner_spread=[m for m, v in spr.items() if v == best_spread],
    )


def report_to_dict(report: ParetoReport) -> dict:
    return {
        "method": report.method,
        "config": dataclasses.asdict(report.config),
        "context": {
            "feature_names": list(report.context.feature_names),
            "values": [float(v) for v in report.context.values],
            "design_feature": report.context.design_feature,
        },
        "ref": list(report.ref),
        "hv": report.hv,
        "spread": report.spread,
        "spread_method": report.spread_method,
        "n_initial": report.n_initial,
        "n_evaluations": report.n_evaluations,
        "front": [
            {"node_count": n, "runtime": p[0], "power": p[1], "found_at": f}
            for n, p, f in zip(report.front_nodes, report.front.points,
                               report.front_found_at)
        ],
        "observations": [
            {"node_count": s.node_count, "runtime": s.runtime, "power": s.power}
            for s in report.observations
        ],
        "history": [h.as_dict() for h in report.history],
        "budget": report.budget,
        "per_seed": [report_to_dict(r) for r in report.per_seed],
    }


def save_report(report: ParetoReport, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True), encoding="utf-8"
    )
