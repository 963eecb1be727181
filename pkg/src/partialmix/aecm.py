"""AECM estimation of t mixtures from partially observed data.

Three estimators share one iteration skeleton:

* ``observed`` marginalizes missing coordinates out of the likelihood and
  updates means and dispersions from observed cells only.
* ``full`` treats missing coordinates as latent and uses their conditional
  expectations given the observed part of each row.
* ``complete_case`` fits on fully observed rows, then classifies the other
  rows by their marginal posterior on observed coordinates.

Each iteration runs: E-step, CM-step 1 for (pi, mu, nu), E-step, CM-step 2
for sigma. The internals are vectorized over a leading "start" axis so the
many short Rnd-EM runs are evaluated as one batch.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma

from ._kernels import estep_block, scatter_block
from .data import Dataset, complete_case_subset, pattern_groups
from .tdist import NU_MAX, NU_MIN, DegenerateError, MixtureParams, symmetrize, t_log_kernel, t_log_normalizer

log = logging.getLogger(__name__)

METHODS = ("observed", "full", "complete_case")
NU_MODES = ("root", "approx")
# "standard": 1 + log(nu/2) - psi(nu/2) + ...; "doubled": 2 + log(nu/2) - ...
NU_CONSTANTS = {"standard": 1.0, "doubled": 2.0}

EMPTY_TOL = 1e-8
PD_FLOOR = 1e-8
NU_INIT = 50.0
RESERVE_FACTOR = 10  # next-ranked starts kept per finalist to replace abandoned ones


class FitError(RuntimeError):
    """No start or finalist produced a usable fit."""


class EmptyClusterError(DegenerateError):
    pass


@dataclass(frozen=True)
class FitConfig:
    epsilon: float = 1e-3
    max_iters: int = 1000
    n_starts: int | None = None
    short_iters: int = 5
    n_finalists: int = 4
    # None: closed-form approximation for short runs, root solve for long runs
    nu_mode: str | None = None
    nu_constant: str = "standard"
    seed: int = 0
    threads: int = 1
    batch_cells: int = 2_000_000

    def __post_init__(self):
        if self.nu_mode not in (None, *NU_MODES):
            raise ValueError(f"nu_mode must be one of {NU_MODES} or None")
        if self.nu_constant not in NU_CONSTANTS:
            raise ValueError(f"nu_constant must be one of {tuple(NU_CONSTANTS)}")
        if self.n_finalists < 1 or (self.n_starts is not None and self.n_starts < self.n_finalists):
            raise ValueError("need n_starts >= n_finalists >= 1")
        if self.epsilon <= 0 or self.max_iters < 1 or self.short_iters < 0:
            raise ValueError("epsilon must be positive, max_iters >= 1, short_iters >= 0")

    def starts_for(self, n: int, p: int, K: int) -> int:
        return self.n_starts if self.n_starts is not None else 10 * n * p * K

    @property
    def short_nu_mode(self) -> str:
        return self.nu_mode or "approx"

    @property
    def long_nu_mode(self) -> str:
        return self.nu_mode or "root"


@dataclass(frozen=True, eq=False)
class Responsibilities:
    """Posterior memberships ``z`` and conditional weights ``w``, both n x K."""

    z: np.ndarray
    w: np.ndarray

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def K(self) -> int:
        return self.z.shape[1]


@dataclass(eq=False)
class FitResult:
    params: MixtureParams
    loglik_trace: list[float]
    iterations: int
    converged: bool
    responsibilities: Responsibilities
    assignments: np.ndarray
    method: str
    n_eff: int
    pd_repair_trace: list[bool] = field(default_factory=list)
    abandoned_finalists: int = 0

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def K(self) -> int:
        return self.params.K

    @property
    def pd_repairs(self) -> int:
        return int(sum(self.pd_repair_trace))


class CellCounter:
    """Counts data cells read by the observed-data CM updates."""

    def __init__(self):
        self.cells = 0
        self.passes = 0

    def add(self, cells: int, passes: int) -> None:
        self.cells += int(cells)
        self.passes += int(passes)


# ---------------------------------------------------------------------------
# prepared data and batched state


class _Prepared:
    """Per-pattern views of a Dataset reused across every iteration."""

    def __init__(self, d: Dataset):
        self.d = d
        self.n, self.p = d.n, d.p
        self.patterns = pattern_groups(d)
        self.blocks = []
        for pat in self.patterns:
            obs, rows = pat.observed, pat.rows
            y = d.values[np.ix_(rows, obs)]
            y.flags.writeable = False
            self.blocks.append((obs, pat.missing, rows, y))
        self.p_obs = d.observed_counts.astype(float)
        self.n_observed = d.n_observed


@dataclass
class _State:
    pi: np.ndarray  # (S, K)
    mu: np.ndarray  # (S, K, p)
    sigma: np.ndarray  # (S, K, p, p)
    nu: np.ndarray  # (S, K)
    alive: np.ndarray  # (S,)

    @property
    def S(self) -> int:
        return self.pi.shape[0]

    @classmethod
    def from_params(cls, mixes: list[MixtureParams]) -> "_State":
        return cls(
            np.stack([m.pi for m in mixes]).astype(float),
            np.stack([m.mu for m in mixes]).astype(float),
            np.stack([m.sigma for m in mixes]).astype(float),
            np.stack([m.nu for m in mixes]).astype(float),
            np.ones(len(mixes), dtype=bool),
        )

    def params(self, s: int) -> MixtureParams:
        pi = self.pi[s] / self.pi[s].sum()
        return MixtureParams(pi, self.mu[s], symmetrize(self.sigma[s]), self.nu[s])

    def copy(self) -> "_State":
        return _State(self.pi.copy(), self.mu.copy(), self.sigma.copy(), self.nu.copy(), self.alive.copy())


@dataclass
class _EStep:
    loglik: np.ndarray  # (S,)
    z: np.ndarray  # (S, K, n)
    w: np.ndarray  # (S, K, n)
    delta: np.ndarray  # (S, K, n)
    # full-EM sufficient statistics around the E-step's mu
    zw_yhat: np.ndarray | None = None  # (S, K, p)
    omega: np.ndarray | None = None  # (S, K, p, p)


def _cholesky(a: np.ndarray) -> np.ndarray:
    return np.linalg.cholesky(symmetrize(a))


def _forward_sub(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L x = b for lower-triangular L (..., d, d); b is (..., m, d), one system per row."""
    x = np.empty(np.broadcast_shapes(b.shape, L.shape[:-2] + (1, L.shape[-1])))
    for j in range(L.shape[-1]):
        acc = b[..., j].copy()
        for l in range(j):
            acc -= L[..., j, l][..., None] * x[..., l]
        x[..., j] = acc / L[..., j, j][..., None]
    return x


def _back_sub(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve L' x = b for lower-triangular L, same layout as ``_forward_sub``."""
    d = L.shape[-1]
    x = np.empty(np.broadcast_shapes(b.shape, L.shape[:-2] + (1, d)))
    for j in range(d - 1, -1, -1):
        acc = b[..., j].copy()
        for l in range(j + 1, d):
            acc -= L[..., l, j][..., None] * x[..., l]
        x[..., j] = acc / L[..., j, j][..., None]
    return x


def _estep(prep: _Prepared, st: _State, full: bool = False) -> _EStep:
    S, K = st.pi.shape
    n, p = prep.n, prep.p
    z = np.empty((S, K, n))
    w = np.empty((S, K, n))
    delta = np.empty((S, K, n))
    loglik = np.zeros(S)
    with np.errstate(divide="ignore"):
        log_pi = np.log(st.pi)
    if full:
        zw_yhat = np.zeros((S, K, p))
        omega = np.zeros((S, K, p, p))

    if not full:
        for obs, mis, rows, y in prep.blocks:
            po = obs.size
            L = _cholesky(st.sigma[:, :, obs[:, None], obs])
            logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
            const = log_pi + t_log_normalizer(st.nu, po, logdet)
            estep_block(y, rows, np.ascontiguousarray(st.mu[:, :, obs]), L, const, st.nu, z, w, delta, loglik)
        return _EStep(loglik, z, w, delta)

    for obs, mis, rows, y in prep.blocks:
        po = obs.size
        L = _cholesky(st.sigma[:, :, obs[:, None], obs])
        dev = y[None, None] - st.mu[:, :, None, obs]  # (S, K, m, po)
        x = _forward_sub(L, dev)  # (S, K, m, po)
        dl = np.einsum("skma,skma->skm", x, x)
        logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(-1)
        nu = st.nu[:, :, None]
        a = log_pi[:, :, None] + t_log_normalizer(nu, po, logdet[:, :, None]) + t_log_kernel(dl, nu, po)
        top = a.max(axis=1)
        lse = top + np.log(np.exp(a - top[:, None, :]).sum(axis=1))  # (S, m)
        zz = np.exp(a - lse[:, None, :])
        ww = (nu + po) / (nu + dl)
        z[:, :, rows] = zz
        w[:, :, rows] = ww
        delta[:, :, rows] = dl
        loglik += lse.sum(-1)

        if full:
            zw = zz * ww
            yhat = np.broadcast_to(st.mu[:, :, None, :], dev.shape[:3] + (p,)).copy()
            yhat[..., obs] = y[None, None]
            if mis.size:
                # sigma_mo sigma_oo^-1 (y_o - mu_o)
                sol = _back_sub(L, x)  # rows of sigma_oo^-1 (y_o - mu_o)
                s_mo = st.sigma[:, :, mis[:, None], obs]
                yhat[..., mis] += sol @ np.swapaxes(s_mo, -1, -2)
                r = _forward_sub(L, s_mo)  # rows of L^-1 sigma_om
                cond = st.sigma[:, :, mis[:, None], mis] - r @ np.swapaxes(r, -1, -2)
                omega[:, :, mis[:, None], mis] += zz.sum(-1)[:, :, None, None] * cond
            zw_yhat += np.einsum("skm,skmp->skp", zw, yhat)
            c = yhat - st.mu[:, :, None, :]
            omega += np.einsum("skm,skma,skmb->skab", zw, c, c)

    out = _EStep(loglik, z, w, delta)
    if full:
        out.zw_yhat, out.omega = zw_yhat, symmetrize(omega)
    return out


def _update_nu(zk, wk, p_obs, nu_old, mode, constant):
    """CM update of nu for every (start, cluster) pair.

    ``zk``, ``wk`` are (S, K, n); ``nu_old`` is (S, K).
    """
    c0 = NU_CONSTANTS[constant]
    nk = zk.sum(-1)
    # digamma and log only vary with the observed count, which takes at most p values
    counts, inv = np.unique(p_obs, return_inverse=True)
    h = 0.5 * (nu_old[..., None] + counts)
    shift = (digamma(h) - np.log(h))[..., inv.ravel()]
    with np.errstate(divide="ignore", invalid="ignore"):
        C = (zk * (np.log(wk) - wk + shift)).sum(-1) / nk
    if mode == "approx":
        v = -c0 - C
        ev = np.exp(np.minimum(v, 700.0))
        half = 0.5 * nu_old
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            nu = (-ev + 2.0 * ev * (np.exp(digamma(half)) - half + 0.5)) / (1.0 - ev)
        nu = np.where(np.isfinite(nu) & (v > 0), nu, NU_MAX)
        return np.clip(nu, NU_MIN, NU_MAX)
    out = np.empty_like(C)
    for idx in np.ndindex(C.shape):
        out[idx] = _nu_root(float(C[idx]), c0)
    return out


def nu_equation(nu, C, constant: str = "standard"):
    """Right-hand side of the nu estimating equation given its data term C."""
    return NU_CONSTANTS[constant] + np.log(0.5 * nu) - digamma(0.5 * nu) + C


def _nu_root(C: float, c0: float) -> float:
    if not np.isfinite(C):
        return NU_MAX
    f = lambda v: c0 + np.log(0.5 * v) - digamma(0.5 * v) + C
    lo, hi = f(NU_MIN), f(NU_MAX)
    if lo == 0.0:
        return NU_MIN
    if lo * hi > 0 or hi == 0.0:
        return NU_MIN if abs(lo) < abs(hi) else NU_MAX
    return brentq(f, NU_MIN, NU_MAX, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500)


def _observed_mu(prep: _Prepared, zw: np.ndarray, counter: CellCounter | None = None):
    """Coordinatewise weighted means over observed cells; returns (num, den)."""
    S, K, _ = zw.shape
    num = np.zeros((S, K, prep.p))
    den = np.zeros((S, K, prep.p))
    for obs, _, rows, y in prep.blocks:
        g = zw[:, :, rows]
        num[:, :, obs] += g @ y
        den[:, :, obs] += g.sum(-1)[:, :, None]
        if counter is not None:
            counter.add(y.size * K * S, 0)
    if counter is not None:
        counter.add(0, K * S)
    return num, den


def _observed_sigma(prep: _Prepared, z, zw, mu, counter: CellCounter | None = None):
    """Pairwise-observed scatter and co-observation weights; returns (num, N)."""
    S, K, _ = z.shape
    p = prep.p
    num = np.zeros((S, K, p, p))
    N = np.zeros((S, K, p, p))
    z = np.ascontiguousarray(z)
    zw = np.ascontiguousarray(zw)
    mu = np.ascontiguousarray(mu)
    for obs, _, rows, y in prep.blocks:
        scatter_block(y, rows, obs, mu, z, zw, num, N)
        if counter is not None:
            counter.add(y.size * K * S, 0)
    if counter is not None:
        counter.add(0, K * S)
    return num, N


def _pd_repair(sigma: np.ndarray):
    """Clip eigenvalues below PD_FLOOR * max eigenvalue; returns (sigma, fired)."""
    sigma = symmetrize(sigma)
    vals, vecs = np.linalg.eigh(sigma)
    top = vals[..., -1:]
    floor = PD_FLOOR * np.maximum(top, 0.0)
    fired = (vals < floor).any(-1)
    if not fired.any():
        return sigma, fired
    clipped = np.maximum(vals, floor)
    fixed = symmetrize((vecs * clipped[..., None, :]) @ np.swapaxes(vecs, -1, -2))
    return np.where(fired[..., None, None], fixed, sigma), fired


class _Engine:
    """Batched AECM iterations for one dataset, method and nu setting."""

    def __init__(self, prep: _Prepared, method: str, nu_mode: str, nu_constant: str, counter=None):
        self.prep = prep
        self.full = method == "full"
        self.nu_mode = nu_mode
        self.nu_constant = nu_constant
        self.counter = counter

    def estep(self, st: _State) -> _EStep:
        return _estep(self.prep, st, full=self.full)

    def iterate(self, st: _State, e: _EStep):
        """One AECM iteration from ``st`` whose E-step is ``e``.

        Returns the new state, per-start PD-repair flags and per-start
        degeneracy flags. The new state is written in place of ``st``.
        """
        prep = self.prep
        S, K = st.pi.shape
        bad = ~st.alive.copy()

        # CM-step 1: pi, mu, nu
        nk = e.z.sum(-1)
        bad |= (nk < K * EMPTY_TOL).any(-1)
        zw = e.z * e.w
        if self.full:
            den = zw.sum(-1)[..., None]
            with np.errstate(divide="ignore", invalid="ignore"):
                mu = e.zw_yhat / den
        else:
            num, den = _observed_mu(prep, zw, self.counter)
            with np.errstate(divide="ignore", invalid="ignore"):
                mu = num / den
        bad |= (den <= 0).any((-1, -2))
        nu = _update_nu(e.z, e.w, prep.p_obs, st.nu, self.nu_mode, self.nu_constant)
        st.pi = nk / prep.n
        st.mu = mu
        st.nu = nu
        bad |= ~(np.isfinite(mu).all((-1, -2)) & np.isfinite(nu).all(-1))
        self._reset(st, bad)

        # CM-step 2: sigma from a fresh E-step
        e2 = self.estep(st)
        nk2 = e2.z.sum(-1)
        bad |= (nk2 < K * EMPTY_TOL).any(-1)
        if self.full:
            with np.errstate(divide="ignore", invalid="ignore"):
                sigma = e2.omega / nk2[..., None, None]
        else:
            num, N = _observed_sigma(prep, e2.z, e2.z * e2.w, st.mu, self.counter)
            bad |= (N <= 0).any((-1, -2, -3))
            with np.errstate(divide="ignore", invalid="ignore"):
                sigma = num / N
        finite = np.isfinite(sigma).all((-1, -2, -3))
        bad |= ~finite
        sigma = np.where(bad[:, None, None, None], st.sigma, sigma)
        sigma, fired = _pd_repair(sigma)
        st.sigma = sigma
        bad |= ~self._factorizable(sigma)
        fired_any = fired.any(-1) & ~bad
        self._reset(st, bad)
        st.alive &= ~bad
        return st, fired_any, bad

    @staticmethod
    def _factorizable(sigma):
        ok = np.linalg.eigvalsh(symmetrize(sigma))
        return (np.isfinite(ok).all(-1) & (ok[..., 0] > 0)).all(-1)

    def _reset(self, st: _State, bad: np.ndarray):
        """Park degenerate starts on a harmless state so the batch stays finite."""
        if not bad.any():
            return
        good = np.flatnonzero(~bad)
        src = good[0] if good.size else None
        for s in np.flatnonzero(bad):
            if src is None:
                K, p = st.mu.shape[1:]
                st.pi[s] = 1.0 / K
                st.mu[s] = 0.0
                st.sigma[s] = np.eye(p)
                st.nu[s] = NU_INIT
            else:
                st.pi[s], st.mu[s], st.sigma[s], st.nu[s] = st.pi[src], st.mu[src], st.sigma[src], st.nu[src]


# ---------------------------------------------------------------------------
# public single-fit operations


def _single(mix: MixtureParams) -> _State:
    return _State.from_params([mix])


def _resp(e: _EStep, s: int = 0) -> Responsibilities:
    return Responsibilities(e.z[s].T.copy(), e.w[s].T.copy())


def _check_finite(e: _EStep):
    if not np.all(np.isfinite(e.loglik)) or not np.isfinite(e.z).all():
        raise DegenerateError("non-finite component log-density")


def e_step(d: Dataset, mix: MixtureParams) -> Responsibilities:
    """Posterior memberships and weights on each row's observed coordinates."""
    e = _estep(_Prepared(d), _single(mix))
    _check_finite(e)
    return _resp(e)


def observed_loglik(d: Dataset, mix: MixtureParams) -> float:
    e = _estep(_Prepared(d), _single(mix))
    _check_finite(e)
    return float(e.loglik[0])


def cm_update_pi(resp: Responsibilities, strict: bool = False) -> np.ndarray:
    pi = resp.z.sum(axis=0) / resp.n
    if strict and np.any(empty_clusters(resp)):
        raise EmptyClusterError(f"empty clusters: {np.flatnonzero(empty_clusters(resp)).tolist()}")
    return pi


def empty_clusters(resp: Responsibilities) -> np.ndarray:
    return resp.z.sum(axis=0) < resp.K * EMPTY_TOL


def cm_update_mu(d: Dataset, resp: Responsibilities, k: int, counter: CellCounter | None = None) -> np.ndarray:
    zw = (resp.z[:, k] * resp.w[:, k])[None, None, :]
    num, den = _observed_mu(_Prepared(d), zw, counter)
    if np.any(den[0, 0] <= 0):
        raise DegenerateError(f"cluster {k} has no weight on features {np.flatnonzero(den[0, 0] <= 0).tolist()}")
    return num[0, 0] / den[0, 0]


def cm_update_sigma(
    d: Dataset, resp: Responsibilities, mu, k: int, repair: bool = True, counter: CellCounter | None = None
) -> np.ndarray:
    z = resp.z[:, k][None, None, :]
    zw = z * resp.w[:, k][None, None, :]
    mu = np.asarray(mu, dtype=float)[None, None, :]
    num, N = _observed_sigma(_Prepared(d), z, zw, mu, counter)
    if np.any(N[0, 0] <= 0):
        raise DegenerateError(f"cluster {k}: some feature pair is never co-observed")
    sigma = symmetrize(num[0, 0] / N[0, 0])
    if repair:
        sigma, _ = _pd_repair(sigma)
    return sigma


def nu_data_term(resp: Responsibilities, p_obs, nu_old) -> np.ndarray:
    """Weighted data term C of the nu equation for each cluster."""
    p_obs = np.asarray(p_obs, dtype=float)
    nu_old = np.asarray(nu_old, dtype=float)
    h = 0.5 * (nu_old[None, :] + p_obs[:, None])
    term = np.log(resp.w) - resp.w + digamma(h) - np.log(h)
    return (resp.z * term).sum(0) / resp.z.sum(0)


def cm_update_nu(resp: Responsibilities, p_obs, nu_old, mode: str = "root", constant: str = "standard") -> np.ndarray:
    """Update the degrees of freedom of every cluster.

    ``mode="root"`` solves the estimating equation on [NU_MIN, NU_MAX] with
    Brent's method; ``mode="approx"`` uses the closed-form approximation.
    When the equation has no sign change in the bracket the endpoint with the
    smaller residual is returned.
    """
    if mode not in NU_MODES:
        raise ValueError(f"mode must be one of {NU_MODES}")
    if np.any(empty_clusters(resp)):
        raise EmptyClusterError("cannot update nu for an empty cluster")
    p_obs = np.asarray(p_obs, dtype=float)
    nu_old = np.asarray(nu_old, dtype=float)
    return _update_nu(resp.z.T[None], resp.w.T[None], p_obs, nu_old[None], mode, constant)[0]


def full_em_conditional_mean(y, mask, mix: MixtureParams, k: int) -> np.ndarray:
    """E(y | observed part, cluster k): missing coordinates by Gaussian regression."""
    y = np.asarray(y, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    mu, sigma = mix.mu[k], symmetrize(mix.sigma[k])
    obs, mis = np.flatnonzero(mask), np.flatnonzero(~mask)
    out = mu.copy()
    out[obs] = y[obs]
    if mis.size:
        try:
            L = np.linalg.cholesky(sigma[np.ix_(obs, obs)])
        except np.linalg.LinAlgError as exc:
            raise DegenerateError("singular observed block") from exc
        sol = np.linalg.solve(L.T, np.linalg.solve(L, y[obs] - mu[obs]))
        out[mis] = mu[mis] + sigma[np.ix_(mis, obs)] @ sol
    return out


def full_em_omega(y, mask, mix: MixtureParams, k: int, z: float, w: float) -> np.ndarray:
    """Conditional expectation of z w (y - mu)(y - mu)' for one row and cluster."""
    mask = np.asarray(mask, dtype=bool)
    mu, sigma = mix.mu[k], symmetrize(mix.sigma[k])
    c = full_em_conditional_mean(y, mask, mix, k) - mu
    obs = np.flatnonzero(mask)
    p = mu.size
    # (I - sigma O' (O sigma O')^-1 O) sigma
    proj = np.zeros((p, p))
    proj[:, obs] = sigma[:, obs] @ np.linalg.inv(sigma[np.ix_(obs, obs)])
    corr = (np.eye(p) - proj) @ sigma
    return z * (w * np.outer(c, c) + symmetrize(corr))


def full_em_cm_updates(resp: Responsibilities, yhat, omegas) -> tuple[np.ndarray, np.ndarray]:
    """Full-EM mean and dispersion updates.

    ``yhat`` is n x K x p conditional means, ``omegas`` is n x K x p x p.
    """
    z, w = resp.z, resp.w
    nk = z.sum(0)
    if np.any(nk < resp.K * EMPTY_TOL):
        raise EmptyClusterError("empty cluster in full-EM update")
    zw = z * w
    mu = np.einsum("ik,ikp->kp", zw, yhat) / zw.sum(0)[:, None]
    sigma = symmetrize(np.asarray(omegas).sum(0) / nk[:, None, None])
    return mu, sigma


def hard_assign(resp: Responsibilities) -> np.ndarray:
    """MAP labels; ties go to the lowest cluster index."""
    return np.argmax(resp.z, axis=1)


def aecm_step(
    d: Dataset, mix: MixtureParams, method: str = "observed", nu_mode: str = "root", nu_constant: str = "standard"
) -> MixtureParams:
    """One AECM iteration from ``mix``; complete_case is treated as observed."""
    prep = _Prepared(d)
    eng = _Engine(prep, method, nu_mode, nu_constant)
    st = _single(mix)
    e = eng.estep(st)
    _check_finite(e)
    st, _, bad = eng.iterate(st, e)
    if bad[0]:
        raise DegenerateError("degenerate AECM update")
    return st.params(0)


# ---------------------------------------------------------------------------
# initialization and fitting


def _feature_moments(d: Dataset):
    mean = np.array([d.values[d.mask[:, j], j].mean() for j in range(d.p)])
    var = np.array([d.values[d.mask[:, j], j].var() for j in range(d.p)])
    var = np.maximum(var, 1e-12 * max(1.0, float(np.abs(mean).max())) ** 2)
    return mean, var


def _draw_starts(d: Dataset, K: int, S: int, rng: np.random.Generator) -> _State:
    if d.n < K:
        raise FitError(f"need at least K={K} rows, have {d.n}")
    mean, var = _feature_moments(d)
    filled = np.where(d.mask, d.values, mean)
    keys = rng.random((S, d.n))
    rows = np.argpartition(keys, K - 1, axis=1)[:, :K] if K < d.n else np.argsort(keys, axis=1)
    rows = np.take_along_axis(rows, np.argsort(np.take_along_axis(keys, rows, 1), axis=1), 1)
    mu = filled[rows]
    return _State(
        np.full((S, K), 1.0 / K),
        mu,
        np.broadcast_to(np.diag(var), (S, K, d.p, d.p)).copy(),
        np.full((S, K), NU_INIT),
        np.ones(S, dtype=bool),
    )


def _short_runs(eng: _Engine, st: _State, iters: int) -> np.ndarray:
    for _ in range(iters):
        e = eng.estep(st)
        st.alive &= np.isfinite(e.loglik)
        st, _, _ = eng.iterate(st, e)
    e = eng.estep(st)
    ll = np.where(st.alive & np.isfinite(e.loglik), e.loglik, -np.inf)
    return ll


def rnd_em_initialize(
    d: Dataset,
    K: int,
    method: str = "observed",
    cfg: FitConfig = FitConfig(),
    rng=None,
    return_scores: bool = False,
    reserve: int = 0,
):
    """Many short AECM runs from random starts; keep the best ``n_finalists``.

    Returns finalists best-first, followed by up to ``reserve`` next-ranked
    starts. With ``return_scores`` also returns their log-likelihoods and
    every start's log-likelihood (by start index). Ties are broken by the
    lower start index.
    """
    if method == "complete_case":
        d, _ = complete_case_subset(d)
        method = "observed"
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    S = cfg.starts_for(d.n, d.p, K)
    if S < cfg.n_finalists:
        raise ValueError("n_starts must be at least n_finalists")
    prep = _Prepared(d)
    starts = _draw_starts(d, K, S, rng)
    chunk = max(1, cfg.batch_cells // max(1, K * d.n * d.p))
    bounds = [(lo, min(S, lo + chunk)) for lo in range(0, S, chunk)]

    def run(b):
        lo, hi = b
        st = _State(*(a[lo:hi].copy() for a in (starts.pi, starts.mu, starts.sigma, starts.nu, starts.alive)))
        eng = _Engine(prep, method, cfg.short_nu_mode, cfg.nu_constant)
        ll = _short_runs(eng, st, cfg.short_iters)
        return st, ll

    if cfg.threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(run, bounds))
    else:
        results = [run(b) for b in bounds]

    scores = np.concatenate([ll for _, ll in results])
    if not np.isfinite(scores).any():
        raise FitError("every random start produced a non-finite likelihood")
    order = np.argsort(-scores, kind="stable")[: cfg.n_finalists + reserve]
    order = order[np.isfinite(scores[order])]
    finalists = []
    for s in order:
        b = int(np.searchsorted([hi for _, hi in bounds], s, side="right"))
        st, _ = results[b]
        finalists.append(st.params(int(s - bounds[b][0])))
    if return_scores:
        return finalists, scores[order], scores
    return finalists


def _long_runs(eng: _Engine, mixes: list[MixtureParams], cfg: FitConfig):
    """Run every candidate to convergence as one batch.

    Returns one entry per candidate: ``(params, estep, trace, repairs,
    converged)`` or None when the candidate degenerated.
    """
    st = _State.from_params(mixes)
    e = eng.estep(st)
    S = st.S
    traces = [[float(v)] for v in e.loglik]
    repairs = [[] for _ in range(S)]
    out: list = [None] * S
    active = np.flatnonzero(np.isfinite(e.loglik))
    st = _take(st, active)
    e = _take_e(e, active)
    for _ in range(cfg.max_iters):
        if active.size == 0:
            break
        st, fired, bad = eng.iterate(st, e)
        e = eng.estep(st)
        bad |= ~np.isfinite(e.loglik)
        done = bad.copy()
        for j, s in enumerate(active):
            if bad[j]:
                continue
            traces[s].append(float(e.loglik[j]))
            repairs[s].append(bool(fired[j]))
            if traces[s][-1] - traces[s][-2] < cfg.epsilon:
                out[s] = (st.params(j), _take_e(e, [j]), traces[s], repairs[s], True)
                done[j] = True
        keep = np.flatnonzero(~done)
        active = active[keep]
        st = _take(st, keep)
        e = _take_e(e, keep)
    for j, s in enumerate(active):
        out[s] = (st.params(j), _take_e(e, [j]), traces[s], repairs[s], False)
    return out


def _take(st: _State, idx) -> _State:
    idx = np.asarray(idx, dtype=int)
    return _State(st.pi[idx], st.mu[idx], st.sigma[idx], st.nu[idx], st.alive[idx])


def _take_e(e: _EStep, idx) -> _EStep:
    idx = np.asarray(idx, dtype=int)
    sub = lambda a: None if a is None else a[idx]
    return _EStep(e.loglik[idx], e.z[idx], e.w[idx], e.delta[idx], sub(e.zw_yhat), sub(e.omega))


def fit(
    d: Dataset,
    K: int,
    method: str = "observed",
    cfg: FitConfig = FitConfig(),
    init: MixtureParams | list[MixtureParams] | None = None,
    counter: CellCounter | None = None,
) -> FitResult:
    """Fit a K-component t mixture by AECM.

    ``init`` skips Rnd-EM and long-runs the given parameters instead.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if K < 1:
        raise ValueError("K must be at least 1")
    target = d
    if method == "complete_case":
        target, _ = complete_case_subset(d)
        if target.n < K:
            raise FitError(f"only {target.n} complete cases for K={K}")
    engine_method = "full" if method == "full" else "observed"
    if init is None:
        ranked = rnd_em_initialize(target, K, engine_method, cfg, reserve=RESERVE_FACTOR * cfg.n_finalists)
        candidates, queue = ranked[: cfg.n_finalists], ranked[cfg.n_finalists :]
    else:
        candidates = [init] if isinstance(init, MixtureParams) else list(init)
        queue = []

    prep = _Prepared(target)
    eng = _Engine(prep, engine_method, cfg.long_nu_mode, cfg.nu_constant, counter)
    runs = [r for r in _long_runs(eng, candidates, cfg) if r is not None]
    abandoned = len(candidates) - len(runs)
    # each abandoned finalist hands over to the next-ranked start
    while queue and len(runs) < len(candidates):
        need = len(candidates) - len(runs)
        batch, queue = queue[:need], queue[need:]
        more = [r for r in _long_runs(eng, batch, cfg) if r is not None]
        abandoned += len(batch) - len(more)
        runs += more
    best = None
    for r in runs:
        if best is None or r[2][-1] > best[2][-1]:
            best = r
    if best is None:
        raise FitError(f"all {abandoned} finalists degenerated (K={K}, method={method})")
    params, e, trace, repairs, converged = best

    if method == "complete_case" and target.n != d.n:
        resp = e_step(d, params)
    else:
        resp = _resp(e)
    return FitResult(
        params=params,
        loglik_trace=trace,
        iterations=len(trace) - 1,
        converged=converged,
        responsibilities=resp,
        assignments=hard_assign(resp),
        method=method,
        n_eff=target.n,
        pd_repair_trace=repairs,
        abandoned_finalists=abandoned,
    )


def trace_states(
    d: Dataset, mix: MixtureParams, iters: int, method: str = "observed", nu_mode: str = "root", nu_constant="standard"
) -> list[MixtureParams]:
    """Parameter states of ``iters`` AECM iterations from ``mix``, initial state included."""
    eng = _Engine(_Prepared(d), method, nu_mode, nu_constant)
    st = _single(mix)
    states = [st.params(0)]
    for _ in range(iters):
        e = eng.estep(st)
        _check_finite(e)
        st, _, bad = eng.iterate(st, e)
        if bad[0]:
            raise DegenerateError("degenerate AECM update")
        states.append(st.params(0))
    return states
