"""Loss-proportional subset sampling.

Each row gets a difficulty score from lightweight per-target predictors;
scores map to clipped selection probabilities p_i = clip(lambda * L_i, p_min, 1)
with lambda auto-tuned by bisection so the expected rate matches the target
fraction tau, then rows are drawn by independent Bernoulli trials. The floor
p_min keeps every row reachable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError, DataError, JobTable
from .surrogate import TreeParams, fit_tree_ensemble

RATE_TOL = 1e-3
MAX_BISECT = 100
DEFAULT_SAT_CAP = 0.10
_LAMBDA_CAP = 1e18


@dataclass(frozen=True)
class SamplerPlan:
    """Tuned sampling state: losses, probabilities, and the drawn mask.

    `losses` are the values the invariant p = clip(lam * L, p_min, 1) holds
    against bit-exactly; when winsorization fired they are the clipped copy.
    """

    losses: np.ndarray
    probs: np.ndarray
    lam: float
    p_min: float
    target_rate: float
    expected_rate: float
    saturated_fraction: float
    rate_converged: bool
    sat_exceeded: bool
    winsorized: bool
    mask: np.ndarray | None = None

    def with_mask(self, mask: np.ndarray) -> "SamplerPlan":
        return SamplerPlan(
            losses=self.losses, probs=self.probs, lam=self.lam, p_min=self.p_min,
            target_rate=self.target_rate, expected_rate=self.expected_rate,
            saturated_fraction=self.saturated_fraction,
            rate_converged=self.rate_converged, sat_exceeded=self.sat_exceeded,
            winsorized=self.winsorized, mask=np.asarray(mask, dtype=bool),
        )

    def save(self, path: str | Path) -> None:
        payload = {
            "lambda": self.lam,
            "p_min": self.p_min,
            "target_rate": self.target_rate,
            "expected_rate": self.expected_rate,
            "saturated_fraction": self.saturated_fraction,
            "rate_converged": self.rate_converged,
            "sat_exceeded": self.sat_exceeded,
            "winsorized": self.winsorized,
            "mask": None if self.mask is None else [int(z) for z in self.mask],
        }
        Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _scorer_params(seed: int) -> TreeParams:
    # lightweight: shallow trees, one pass, no CV
    return TreeParams(mode="bagged", n_estimators=16, max_depth=3, seed=seed)


def _minmax(errors: np.ndarray) -> np.ndarray:
    lo = errors.min()
    hi = errors.max()
    if hi <= lo:
        return np.zeros_like(errors)
    return (errors - lo) / (hi - lo)


def score_difficulty(table: JobTable, seed: int = 0) -> np.ndarray:
    """Per-row difficulty: mean over targets of min-max-normalized errors.

    Regression targets contribute absolute prediction error; classification
    targets contribute the soft error 1 - Pr(correct | x_i), with class
    probabilities from one-vs-rest indicator forests.
    """
    targets = table.columns_with_role("regression_target", "classification_target")
    if not targets:
        raise ConfigError("no target columns configured for difficulty scoring")
    per_target: list[np.ndarray] = []
    for t_idx, target in enumerate(targets):
        feature_names = [
            c.name for c in table.columns
            if c.name != target.name and c.role != "ignored"
        ]
        X = table.numeric_matrix(feature_names)
        y = table.numeric_matrix([target.name])[:, 0]
        if np.isnan(X).any() or np.isnan(y).any():
            raise DataError("difficulty scoring requires a fully numeric table")
        params = _scorer_params(seed + 1000 * t_idx)
        if target.role == "regression_target":
            model = fit_tree_ensemble(X, y, params)
            errors = np.abs(model.predict(X) - y)
        else:
            classes = np.unique(y)
            scores = np.empty((len(y), len(classes)))
            for k, cls in enumerate(classes):
                indicator = (y == cls).astype(float)
                model = fit_tree_ensemble(X, indicator, params)
                scores[:, k] = np.clip(model.predict(X), 0.0, None)
            totals = scores.sum(axis=1)
            totals[totals == 0] = 1.0
            true_col = np.searchsorted(classes, y)
            prob_correct = scores[np.arange(len(y)), true_col] / totals
            errors = 1.0 - prob_correct
        per_target.append(_minmax(errors))
    return np.mean(per_target, axis=0)


@dataclass(frozen=True)
class LambdaTune:
    lam: float
    probs: np.ndarray
    losses: np.ndarray
    expected_rate: float
    saturated_fraction: float
    rate_converged: bool
    winsorized: bool


def _clip_probs(lam: float, losses: np.ndarray, p_min: float) -> np.ndarray:
    return np.clip(lam * losses, p_min, 1.0)


def _bisect(losses: np.ndarray, tau: float, p_min: float) -> tuple[float, np.ndarray, bool]:
    def rate(lam: float) -> float:
        return float(_clip_probs(lam, losses, p_min).mean())

    lo = 0.0
    hi = 1.0
    while rate(hi) < tau and hi < _LAMBDA_CAP:
        hi *= 2.0
    lam = hi  # rate may stay below tau when the p_min floor dominates
    if rate(hi) >= tau:
        for _ in range(MAX_BISECT):
            mid = 0.5 * (lo + hi)
            if abs(rate(mid) - tau) <= RATE_TOL:
                lam = mid
                break
            if rate(mid) < tau:
                lo = mid
            else:
                hi = mid
        else:
            lam = 0.5 * (lo + hi)
    probs = _clip_probs(lam, losses, p_min)
    converged = abs(float(probs.mean()) - tau) <= RATE_TOL
    return lam, probs, converged


def tune_lambda(losses: np.ndarray, tau: float, p_min: float,
                sat_cap: float = DEFAULT_SAT_CAP) -> LambdaTune:
    """Bisection on lambda until |mean(p) - tau| <= 1e-3 (or 100 iterations).

    If the saturated fraction (p_i == 1) exceeds sat_cap, losses are
    winsorized at their (1 - sat_cap) quantile and the search reruns once.
    """
    losses = np.asarray(losses, dtype=float)
    if (losses < 0).any() or not np.isfinite(losses).all():
        raise DataError("losses must be finite and nonnegative")
    if not (0 < tau <= 1):
        raise ConfigError(f"sampling fraction must be in (0, 1], got {tau}")
    if tau < p_min:
        raise ConfigError(
            f"infeasible target: tau={tau} < p_min={p_min} forces mean(p) >= p_min"
        )
    lam, probs, converged = _bisect(losses, tau, p_min)
    winsorized = False
    used = losses
    sat = float((probs == 1.0).mean())
    if sat > sat_cap:
        cut = float(np.quantile(losses, 1.0 - sat_cap))
        used = np.minimum(losses, cut)
        lam, probs, converged = _bisect(used, tau, p_min)
        winsorized = True
        sat = float((probs == 1.0).mean())
    return LambdaTune(
        lam=lam, probs=probs, losses=used,
        expected_rate=float(probs.mean()),
        saturated_fraction=sat,
        rate_converged=converged,
        winsorized=winsorized,
    )


def build_plan(losses: np.ndarray, tau: float, p_min: float,
               sat_cap: float = DEFAULT_SAT_CAP) -> SamplerPlan:
    tune = tune_lambda(losses, tau, p_min, sat_cap)
    return SamplerPlan(
        losses=tune.losses,
        probs=tune.probs,
        lam=tune.lam,
        p_min=p_min,
        target_rate=tau,
        expected_rate=tune.expected_rate,
        saturated_fraction=tune.saturated_fraction,
        rate_converged=tune.rate_converged,
        sat_exceeded=tune.saturated_fraction > sat_cap,
        winsorized=tune.winsorized,
    )


def draw_subset(table: JobTable, probs: np.ndarray,
                seed: int) -> tuple[JobTable, np.ndarray]:
    """Independent Bernoulli draws (PCG64 via numpy default_rng); the subset
    keeps original row order and every column."""
    probs = np.asarray(probs, dtype=float)
    if len(probs) != table.n_rows:
        raise DataError(
            f"probability vector length {len(probs)} != table rows {table.n_rows}"
        )
    rng = np.random.default_rng(seed)
    mask = rng.random(len(probs)) < probs
    return table.select_rows(mask), mask


def sample_table(table: JobTable, tau: float, p_min: float, seed: int,
                 sat_cap: float = DEFAULT_SAT_CAP) -> tuple[JobTable, SamplerPlan]:
    """Score, tune, and draw in one call; returns the subset and the full plan."""
    losses = score_difficulty(table, seed=seed)
    plan = build_plan(losses, tau, p_min, sat_cap)
    subset, mask = draw_subset(table, plan.probs, seed)
    return subset, plan.with_mask(mask)
