"""Plain-loop reference implementations used as independent oracles.

Nothing here imports the package's numerics; everything is scalar Python
arithmetic over nested lists or numpy element access.
"""
import math

import numpy as np


def matmul_loop(a, b):
    a, b = np.asarray(a), np.asarray(b)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def vec_mat(v, W):
    """Row vector times matrix."""
    return [sum(v[k] * W[k][j] for k in range(len(v))) for j in range(len(W[0]))]


def softmax_list(xs):
    top = max(xs)
    ex = [math.exp(x - top) for x in xs]
    total = sum(ex)
    return [e / total for e in ex]


def elu(x):
    return x if x > 0 else math.expm1(x)


def leaky(x, slope=0.2):
    return x if x >= 0 else slope * x


def mlp_loop(x, W1, b1, W2, b2):
    hidden = [elu(h + b) for h, b in zip(vec_mat(x, W1), b1)]
    return [o + b for o, b in zip(vec_mat(hidden, W2), b2)]


def cos(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    return dot / math.sqrt(sum(a * a for a in u) * sum(b * b for b in v))


def object_layer_loop(adjacency, H, W, a):
    """Multi-head graph attention with an agent row appended last in ``H``.

    ``adjacency`` covers the real nodes only; the agent neighbours everyone
    and every node neighbours itself.
    """
    H = np.asarray(H)
    N, d = H.shape
    n = N - 1
    K = len(W)
    out = np.zeros((N, d))
    weights = np.zeros((K, N, N))
    for i in range(N):
        if i == n:
            nbrs = list(range(N))
        else:
            nbrs = sorted({j for j in range(n) if adjacency[i][j]} | {i, n})
        acc = [0.0] * d
        for k in range(K):
            z = [vec_mat(H[j], W[k]) for j in range(N)]
            logits = []
            for j in nbrs:
                s = sum(a[k][t] * z[i][t] for t in range(d)) + sum(a[k][d + t] * z[j][t] for t in range(d))
                logits.append(leaky(s))
            alpha = softmax_list(logits)
            for w, j in zip(alpha, nbrs):
                weights[k, i, j] = w
                for t in range(d):
                    acc[t] += w * z[j][t]
        out[i] = [elu(v / K) for v in acc]
    return out, weights


def set_layer_loop(incidence, features, mlp_arrays):
    d = len(features[0]) if len(features) else len(mlp_arrays[3])
    rows = []
    for items in incidence:
        if not items:
            rows.append([0.0] * len(mlp_arrays[3]))
            continue
        mean = [sum(features[j][t] for j in items) / len(items) for t in range(d)]
        rows.append(mlp_loop(mean, *mlp_arrays))
    return np.array(rows)


def guided_attention_loop(F, P, cR, cT, W_K, W_Q, W_V, W_G):
    Y = [list(r) for r in F] + [list(r) for r in P]
    C = [list(cR)] * len(F) + [list(cT)] * len(P)
    N = len(Y)
    d = len(Y[0])
    K = [vec_mat(y, W_K) for y in Y]
    Q = [vec_mat(y, W_Q) for y in Y]
    V = [vec_mat(y, W_V) for y in Y]
    G = [vec_mat(c, W_G) for c in C]
    out = np.zeros((N, d))
    for i in range(N):
        scores = []
        for j in range(N):
            s = sum(G[i][t] * Q[i][t] * G[j][t] * K[j][t] for t in range(d))
            scores.append(s / math.sqrt(d))
        w = softmax_list(scores)
        for t in range(d):
            out[i, t] = sum(w[j] * V[j][t] for j in range(N)) + Y[i][t]
    return out


def local_attention_loop(F, P, W_r, W_t):
    n, m = len(F), len(P)
    d = len(F[0])
    Fr = [vec_mat(f, W_r) for f in F]
    Pt = [vec_mat(p, W_t) for p in P]
    A = [[sum(Fr[i][t] * Pt[j][t] for t in range(d)) for j in range(m)] for i in range(n)]
    F_star = np.zeros((n, d))
    for i in range(n):
        w = softmax_list(A[i])
        for t in range(d):
            F_star[i, t] = sum(w[j] * P[j][t] for j in range(m))
    P_star = np.zeros((m, d))
    for j in range(m):
        w = softmax_list([A[i][j] for i in range(n)])
        for t in range(d):
            P_star[j, t] = sum(w[i] * F[i][t] for i in range(n))
    return np.array(A), F_star, P_star


def local_similarity_loop(F, F_star, P, P_star):
    return (sum(cos(F[i], F_star[i]) for i in range(len(F))) / len(F)
            + sum(cos(P[j], P_star[j]) for j in range(len(P))) / len(P))


def hard_negatives_scan(S):
    b = len(S)
    rows, cols = [], []
    for i in range(b):
        best, arg = -math.inf, None
        for j in range(b):
            if j != i and S[i][j] > best:
                best, arg = S[i][j], j
        rows.append(arg)
    for j in range(b):
        best, arg = -math.inf, None
        for i in range(b):
            if i != j and S[i][j] > best:
                best, arg = S[i][j], i
        cols.append(arg)
    return rows, cols


def triplet_loop(S, margin):
    rows, cols = hard_negatives_scan(S)
    total = 0.0
    for i in range(len(S)):
        total += max(0.0, margin - S[i][i] + S[i][rows[i]])
        total += max(0.0, margin - S[i][i] + S[cols[i]][i])
    return total
