"""Naive loop transcriptions used as independent references in the tests."""

import math

import numpy as np


def brute_topk_tags(m, gamma):
    c = len(m)
    k_count = math.floor(gamma * c)
    ranked = sorted(range(c), key=lambda p: (-m[p], p))
    tags = [0] * c
    for p in ranked[:k_count]:
        tags[p] = 1
    return tags


def brute_argmax(u_c):
    best, pos = None, None
    for i in range(u_c.shape[0]):
        for j in range(u_c.shape[1]):
            if best is None or u_c[i, j] > best:
                best, pos = u_c[i, j], (i, j)
    return pos


def brute_mask(u, m, gamma, k):
    """Top-K tags, argmax centres and the k x k zero-set, cell by cell."""
    h, w, c = u.shape
    tags = brute_topk_tags(list(m), gamma)
    s = np.ones((h, w, c))
    half = k // 2
    for q in range(c):
        if not tags[q]:
            continue
        a, b = brute_argmax(u[:, :, q])
        for i in range(h):
            for j in range(w):
                if a - half <= i <= a + half and b - half <= j <= b + half:
                    s[i, j, q] = 0.0
    return s, tags


def brute_apply(u, s):
    h, w, c = u.shape
    out = np.zeros_like(u)
    for z in range(c):
        kept = s[:, :, z].sum()
        if kept == 0:
            continue
        out[:, :, z] = u[:, :, z] * s[:, :, z] * ((h * w) / kept)
    return out


def brute_attention(u, w1, w2):
    h, w, c = u.shape
    v = [sum(u[i, j, q] for i in range(h) for j in range(w)) / (h * w) for q in range(c)]
    hidden = [max(0.0, sum(w1[r, q] * v[q] for q in range(c))) for r in range(w1.shape[0])]
    z = [sum(w2[q, r] * hidden[r] for r in range(w1.shape[0])) for q in range(c)]
    return np.array([1.0 / (1.0 + math.exp(-x)) for x in z])
