"""Synthetic t-mixture data and missingness mechanisms for benchmarking."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset
from .tdist import MixtureParams

MECHANISMS = ("MCAR", "MAR", "NMAR1", "NMAR2")


@dataclass(frozen=True)
class SimulationSpec:
    n: int = 100
    p: int = 3
    K: int = 3
    eccentricity: float = 0.5
    separation: float = 6.0
    nu: float = 15.0
    lam: float = 0.1
    mechanism: str = "MCAR"
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.p, self.K) < 1:
            raise ValueError("n, p, K must be positive")
        if not 0 <= self.eccentricity < 1:
            raise ValueError("eccentricity must lie in [0, 1)")
        if self.separation < 0 or self.nu <= 0:
            raise ValueError("separation must be nonnegative and nu positive")
        if not 0 <= self.lam < 1:
            raise ValueError("lam must lie in [0, 1)")
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {MECHANISMS}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SimulationSpec":
        return cls(**json.loads(text))

    def replicate(self, r: int) -> "SimulationSpec":
        return replace(self, seed=self.seed + r)


PRESETS = {
    "low": SimulationSpec(eccentricity=0.5, separation=6.0),
    "high": SimulationSpec(eccentricity=0.9, separation=3.5),
}


def preset(name: str, **overrides) -> SimulationSpec:
    return replace(PRESETS[name], **overrides)


@dataclass(frozen=True, eq=False)
class SimulatedDataset:
    data: Dataset
    truth_labels: np.ndarray
    truth_params: MixtureParams
    full_values: np.ndarray
    spec: SimulationSpec


def _random_rotation(p: int, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((p, p)))
    return q * np.sign(np.diag(r))


def gen_params(spec: SimulationSpec, rng=None) -> MixtureParams:
    """Dispersions with the requested eccentricity, means at the requested separation.

    Eigenvalues run geometrically from 1 - e^2 to 1, so the smallest over
    largest ratio is 1 - e^2. Means are scaled so that the smallest pairwise
    Mahalanobis distance under the average dispersion equals ``separation``.
    """
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    p, K = spec.p, spec.K
    eig = np.geomspace(1.0 - spec.eccentricity**2, 1.0, p)
    sigmas = []
    for _ in range(K):
        Q = _random_rotation(p, rng)
        sigmas.append((Q * rng.permutation(eig)) @ Q.T)
    sigmas = np.array([(s + s.T) / 2 for s in sigmas])
    mu = rng.standard_normal((K, p)) * 3.0
    if K > 1:
        L = np.linalg.cholesky(sigmas.mean(0))
        white = np.linalg.solve(L, mu.T).T
        dists = [np.linalg.norm(white[a] - white[b]) for a in range(K) for b in range(a + 1, K)]
        mu = mu * (spec.separation / min(dists))
    else:
        mu = np.zeros((1, p))
    return MixtureParams(np.full(K, 1.0 / K), mu, sigmas, np.full(K, float(spec.nu)))


def sample(spec: SimulationSpec, params: MixtureParams, rng=None) -> SimulatedDataset:
    """Draw labels, gamma weights and Gaussian rows from the hierarchy."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    labels = rng.choice(params.K, size=spec.n, p=params.pi)
    nu = params.nu[labels]
    w = rng.gamma(shape=nu / 2.0, scale=2.0 / nu)
    chol = np.linalg.cholesky(params.sigma)
    eps = rng.standard_normal((spec.n, params.p))
    y = params.mu[labels] + np.einsum("iab,ib->ia", chol[labels], eps) / np.sqrt(w)[:, None]
    return SimulatedDataset(Dataset(y, np.ones_like(y, dtype=bool)), labels, params, y, spec)


def _target(n: int, p: int, lam: float) -> int:
    return int(math.floor(lam * n * p + 0.5))


def _mask_cells(mask: np.ndarray, candidates: np.ndarray, count: int, rng, order=None) -> None:
    """Mask ``count`` of the flat ``candidates`` cells in place.

    Cells are taken in random order (or ``order`` if given); a cell whose
    removal would empty its row or column is skipped and the next one used.
    """
    n, p = mask.shape
    seq = candidates[rng.permutation(candidates.size)] if order is None else candidates[order]
    row_left = mask.sum(1)
    col_left = mask.sum(0)
    taken = 0
    for c in seq:
        if taken == count:
            break
        i, j = divmod(int(c), p)
        if not mask[i, j] or row_left[i] <= 1 or col_left[j] <= 1:
            continue
        mask[i, j] = False
        row_left[i] -= 1
        col_left[j] -= 1
        taken += 1
    if taken < count:
        raise ValueError(f"could only mask {taken} of {count} cells without emptying a row or column")


def apply_mcar(full, lam: float, seed=None) -> Dataset:
    """Mask round(lam*n*p) cells uniformly at random."""
    full = np.asarray(full, dtype=float)
    rng = np.random.default_rng(seed)
    mask = np.ones(full.shape, dtype=bool)
    _mask_cells(mask, np.arange(full.size), _target(*full.shape, lam), rng)
    return Dataset(full, mask)


def mar_features(p: int) -> int:
    return math.ceil(2 * p / 3)


def apply_mar(full, lam: float, seed=None) -> Dataset:
    """MCAR deletion confined to the first ceil(2p/3) features.

    The total is split evenly across those features, so for p = 3 each of the
    first two features loses a 1.5 * lam share and the third stays complete.
    """
    full = np.asarray(full, dtype=float)
    n, p = full.shape
    rng = np.random.default_rng(seed)
    m = mar_features(p)
    total = _target(n, p, lam)
    per = [total // m + (1 if j < total % m else 0) for j in range(m)]
    mask = np.ones(full.shape, dtype=bool)
    for j in range(m):
        _mask_cells(mask, np.arange(n) * p + j, per[j], rng)
    return Dataset(full, mask)


def _unprotected_rows(labels, K_required=2):
    labels = np.asarray(labels)
    protected = np.min(labels)
    rows = np.flatnonzero(labels != protected)
    if rows.size == 0:
        raise ValueError("NMAR mechanisms need at least two clusters")
    return rows


def apply_nmar1(full, labels, lam: float, seed=None) -> Dataset:
    """Keep the first cluster complete; MCAR over the other clusters' cells."""
    full = np.asarray(full, dtype=float)
    n, p = full.shape
    rng = np.random.default_rng(seed)
    rows = _unprotected_rows(labels)
    cells = (rows[:, None] * p + np.arange(p)).ravel()
    mask = np.ones(full.shape, dtype=bool)
    _mask_cells(mask, cells, _target(n, p, lam), rng)
    return Dataset(full, mask)


def apply_nmar2(full, labels, lam: float, seed=None) -> Dataset:
    """Keep the first cluster complete; mask the bottom quantile of each feature elsewhere.

    The quantile is taken per feature over the unprotected rows jointly, with
    the total split evenly across features. A cell whose removal would empty
    its row is skipped in favour of the next-smallest value.
    """
    full = np.asarray(full, dtype=float)
    n, p = full.shape
    rows = _unprotected_rows(labels)
    total = _target(n, p, lam)
    per = [total // p + (1 if j < total % p else 0) for j in range(p)]
    mask = np.ones(full.shape, dtype=bool)
    rng = np.random.default_rng(seed)
    for j in range(p):
        cells = rows * p + j
        order = np.argsort(full[rows, j], kind="stable")
        _mask_cells(mask, cells, per[j], rng, order=order)
    return Dataset(full, mask)


def apply_mechanism(full, labels, mechanism: str, lam: float, seed=None) -> Dataset:
    if mechanism == "MCAR":
        return apply_mcar(full, lam, seed)
    if mechanism == "MAR":
        return apply_mar(full, lam, seed)
    if mechanism == "NMAR1":
        return apply_nmar1(full, labels, lam, seed)
    if mechanism == "NMAR2":
        return apply_nmar2(full, labels, lam, seed)
    raise ValueError(f"unknown mechanism {mechanism!r}")


def simulate(spec: SimulationSpec) -> SimulatedDataset:
    """Parameters, complete sample and masked dataset for one replicate."""
    rng = np.random.default_rng(spec.seed)
    params = gen_params(spec, rng)
    sim = sample(spec, params, rng)
    data = apply_mechanism(sim.full_values, sim.truth_labels, spec.mechanism, spec.lam, rng)
    return replace(sim, data=data)


def write_labels(labels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row_id,label\n")
        for i, lab in enumerate(labels):
            fh.write(f"{i},{int(lab)}\n")
