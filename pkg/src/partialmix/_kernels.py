"""Compiled inner loops for the observed-data E-step and dispersion update."""

import math

import numpy as np
from numba import njit


@njit(cache=True, error_model="numpy")
def estep_block(y, rows, mu_o, L, const, nu, z, w, delta, loglik):
    """Fill z, w, delta at ``rows`` for one missingness pattern; add to loglik.

    ``y`` is (m, d) observed values, ``mu_o`` (S, K, d), ``L`` (S, K, d, d)
    lower Cholesky factors, ``const`` (S, K) log pi plus log normalizer.
    """
    S, K, d = mu_o.shape
    m = y.shape[0]
    a = np.empty(K)
    x = np.empty(d)
    for s in range(S):
        for i in range(m):
            r = rows[i]
            top = -np.inf
            for k in range(K):
                q = 0.0
                for j in range(d):
                    acc = y[i, j] - mu_o[s, k, j]
                    for l in range(j):
                        acc -= L[s, k, j, l] * x[l]
                    x[j] = acc / L[s, k, j, j]
                    q += x[j] * x[j]
                v = nu[s, k]
                delta[s, k, r] = q
                w[s, k, r] = (v + d) / (v + q)
                a[k] = const[s, k] - 0.5 * (v + d) * math.log1p(q / v)
                if a[k] > top:
                    top = a[k]
            tot = 0.0
            for k in range(K):
                a[k] = math.exp(a[k] - top)
                tot += a[k]
            for k in range(K):
                z[s, k, r] = a[k] / tot
            loglik[s] += top + math.log(tot)


@njit(cache=True, error_model="numpy")
def scatter_block(y, rows, obs, mu, z, zw, num, N):
    """Accumulate weighted outer products of observed deviations and co-observation weights."""
    S, K, p = mu.shape
    m, d = y.shape
    dev = np.empty(d)
    for s in range(S):
        for k in range(K):
            zsum = 0.0
            for i in range(m):
                r = rows[i]
                g = zw[s, k, r]
                zsum += z[s, k, r]
                for j in range(d):
                    dev[j] = y[i, j] - mu[s, k, obs[j]]
                for a in range(d):
                    ga = g * dev[a]
                    for b in range(a + 1):
                        num[s, k, obs[a], obs[b]] += ga * dev[b]
            for a in range(d):
                for b in range(a + 1):
                    N[s, k, obs[a], obs[b]] += zsum
    for s in range(S):
        for k in range(K):
            for a in range(p):
                for b in range(a):
                    num[s, k, b, a] = num[s, k, a, b]
                    N[s, k, b, a] = N[s, k, a, b]
