"""BIC and selection of the number of clusters."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .aecm import FitConfig, FitError, FitResult, fit
from .data import Dataset
from .tdist import DegenerateError

log = logging.getLogger(__name__)


def free_param_count(K: int, p: int) -> int:
    """Mixing weights, means, unrestricted dispersions and one nu per cluster."""
    if K < 1 or p < 1:
        raise ValueError("K and p must be positive")
    return (K - 1) + K * p + K * p * (p + 1) // 2 + K


def bic(loglik: float, m: int, n_eff: int) -> float:
    if n_eff < 1:
        raise ValueError("n_eff must be at least 1")
    return -2.0 * loglik + m * math.log(n_eff)


@dataclass
class KEntry:
    K: int
    fit: FitResult | None
    bic: float
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.fit is not None


@dataclass
class SelectionResult:
    per_k: list[KEntry]
    best_k: int

    @property
    def bic_table(self) -> list[tuple[int, float]]:
        return [(e.K, e.bic) for e in self.per_k]

    @property
    def best(self) -> FitResult:
        return next(e.fit for e in self.per_k if e.K == self.best_k)

    def write_csv(self, path: str | Path, p: int) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["K", "loglik", "m", "bic", "converged", "iterations"])
            for e in self.per_k:
                m = free_param_count(e.K, p)
                if e.ok:
                    w.writerow([e.K, repr(e.fit.loglik), m, repr(e.bic), str(e.fit.converged).lower(), e.fit.iterations])
                else:
                    w.writerow([e.K, "nan", m, "nan", "false", 0])


def _fit_one(d: Dataset, K: int, method: str, cfg: FitConfig) -> KEntry:
    try:
        # per-K seed keeps the sweep reproducible under any thread count
        res = fit(d, K, method, replace(cfg, seed=cfg.seed * 1000 + K, threads=1))
    except (FitError, DegenerateError) as exc:
        log.warning("K=%d failed: %s", K, exc)
        return KEntry(K, None, math.nan, str(exc))
    return KEntry(K, res, bic(res.loglik, free_param_count(K, d.p), res.n_eff))


def select_k(d: Dataset, k_range: tuple[int, int], method: str = "observed", cfg: FitConfig = FitConfig()) -> SelectionResult:
    """Fit every K in ``k_range`` (inclusive) and keep the smallest BIC.

    Ties go to the smaller K. Failed fits are recorded and excluded.
    """
    k_min, k_max = k_range
    if k_min < 1 or k_max < k_min:
        raise ValueError(f"invalid K range {k_range}")
    ks = list(range(k_min, k_max + 1))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            entries = list(ex.map(lambda K: _fit_one(d, K, method, cfg), ks))
    else:
        entries = [_fit_one(d, K, method, cfg) for K in ks]
    good = [e for e in entries if e.ok]
    if not good:
        raise FitError(f"every K in {k_range} failed")
    best = min(good, key=lambda e: (e.bic, e.K))
    return SelectionResult(entries, best.K)
