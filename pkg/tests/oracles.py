"""Brute-force reference computations, written without the package's fast paths."""
from __future__ import annotations

import itertools
import math

import numpy as np


def subsets(n, N):
    return [frozenset(c) for c in itertools.combinations(range(n), N)]


def brute_Z(alpha, N):
    return sum(math.exp(sum(alpha[x] for x in A)) for A in subsets(len(alpha), N))


def brute_probs(alpha, N):
    """Canonical weights keyed by occupied-site sets."""
    n = len(alpha)
    Z = brute_Z(alpha, N)
    return {A: math.exp(sum(alpha[x] for x in A)) / Z for A in subsets(n, N)}


def mask_of(A):
    return sum(1 << x for x in A)


def swap(A, x, y):
    A = set(A)
    ox, oy = x in A, y in A
    A.discard(x)
    A.discard(y)
    if ox:
        A.add(y)
    if oy:
        A.add(x)
    return frozenset(A)


def double_sum_form(alpha, N, pairs, f_of_set):
    """``sum_eta mu(eta) sum_pairs (f(T eta) - f(eta))^2`` by direct iteration."""
    probs = brute_probs(alpha, N)
    total = 0.0
    for A, p in probs.items():
        for x, y in pairs:
            total += p * (f_of_set(swap(A, x, y)) - f_of_set(A)) ** 2
    return total


def dense_generator(alpha, N, pairs):
    """Rate matrix over states sorted by mask, rates ``1 + mu(eta')/mu(eta)``."""
    probs = brute_probs(alpha, N)
    states = sorted(probs, key=mask_of)
    index = {A: i for i, A in enumerate(states)}
    G = np.zeros((len(states), len(states)))
    for A in states:
        for x, y in pairs:
            B = swap(A, x, y)
            if B != A:
                G[index[A], index[B]] += 1 + probs[B] / probs[A]
    G -= np.diag(G.sum(axis=1))
    return states, np.array([probs[A] for A in states]), G


def reversible_gap(G, mu):
    """Second-smallest eigenvalue of ``-G`` after symmetrizing by ``mu``."""
    s = np.sqrt(mu)
    S = -(s[:, None] * G / s[None, :])
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(np.sort(w)[1])


def brute_pencil(A, B, tol=1e-10):
    """``max A(f)/B(f)`` via the pseudo-inverse square root of ``B``."""
    w, U = np.linalg.eigh(B)
    keep = w > tol * w.max()
    W = U[:, keep] / np.sqrt(w[keep])
    return float(np.linalg.eigvalsh(W.T @ A @ W).max())
