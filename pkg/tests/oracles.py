"""Independent reference implementations used only by the tests."""

import math

import numpy as np


def hsic_expanded(U, V, sigma_u, sigma_v):
    """Biased HSIC through its expanded sum form, with explicit loops and no matrices."""
    m = len(U)

    def k(a, b, s):
        return math.exp(-sum((x - y) ** 2 for x, y in zip(a, b)) / s**2)

    K = [[k(U[i], U[j], sigma_u) for j in range(m)] for i in range(m)]
    L = [[k(V[i], V[j], sigma_v) for j in range(m)] for i in range(m)]
    t1 = sum(K[i][j] * L[i][j] for i in range(m) for j in range(m))
    t2 = sum(K[i][j] for i in range(m) for j in range(m)) * sum(L[i][j] for i in range(m) for j in range(m))
    t3 = sum(K[i][j] * L[i][q] for i in range(m) for j in range(m) for q in range(m))
    return (t1 + t2 / m**2 - 2 * t3 / m) / (m - 1) ** 2


def hsic_trace(K, L):
    """tr(K P L P) / (m-1)^2 with the centering matrix formed explicitly."""
    m = len(K)
    P = np.eye(m) - np.ones((m, m)) / m
    return float(np.trace(K @ P @ L @ P)) / (m - 1) ** 2


def attention_loops(E, W1, W2):
    """Interest matrix by explicit loops: softmax over positions of W2 tanh(W1 e_t)."""
    t, d = E.shape
    c, h = W2.shape
    M = np.zeros((c, d))
    A = np.zeros((c, t))
    for j in range(c):
        logits = []
        for s in range(t):
            hidden = [math.tanh(sum(W1[r, q] * E[s, q] for q in range(d))) for r in range(h)]
            logits.append(sum(W2[j, r] * hidden[r] for r in range(h)))
        mx = max(logits)
        ex = [math.exp(x - mx) for x in logits]
        for s in range(t):
            A[j, s] = ex[s] / sum(ex)
        for q in range(d):
            M[j, q] = sum(A[j, s] * E[s, q] for s in range(t))
    return A, M


def brute_force_top_p(M, V, context, p):
    """Score every item by the max over interest rows and sort with lower ids first on ties."""
    excluded = set(int(i) for i in context)
    scored = []
    for i in range(V.shape[0]):
        if i in excluded:
            continue
        scored.append((-max(float(np.dot(row, V[i])) for row in M), i))
    scored.sort()
    return [i for _, i in scored[:p]]
