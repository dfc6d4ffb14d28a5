"""Slow, obviously-correct reference computations used to check the fast paths."""

import math

import numpy as np


def brute_force_auc(match_d, nonmatch_d):
    score = 0.0
    for m in match_d:
        for n in nonmatch_d:
            score += 1.0 if m < n else 0.5 if m == n else 0.0
    return score / (len(match_d) * len(nonmatch_d))


def naive_hamming(bits_a, bits_b):
    return sum(1 for x, y in zip(bits_a, bits_b) if x != y)


def direct_blur(img, sigma):
    """Per-pixel 2-D convolution with a clamped-border, normalised Gaussian."""
    r = math.ceil(3 * sigma)
    k1 = [math.exp(-(t * t) / (2 * sigma * sigma)) for t in range(-r, r + 1)]
    s = sum(k1)
    k1 = [v / s for v in k1]
    h, w = img.shape
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-r, r + 1):
                for dx in range(-r, r + 1):
                    yy = min(max(y + dy, 0), h - 1)
                    xx = min(max(x + dx, 0), w - 1)
                    acc += k1[dy + r] * k1[dx + r] * img[yy, xx]
            out[y, x] = acc
    return out


def naive_greedy_matches(dist, threshold):
    """Repeatedly take the globally smallest unclaimed distance (distinct distances only)."""
    dist = np.array(dist, dtype=float)
    count = 0
    while True:
        masked = np.where(np.isfinite(dist), dist, np.inf)
        i, j = np.unravel_index(np.argmin(masked), masked.shape)
        if not np.isfinite(masked[i, j]) or masked[i, j] > threshold:
            return count
        count += 1
        dist[i, :] = np.inf
        dist[:, j] = np.inf



def pairwise_auc(match_d, nonmatch_d):
    """Same comparison as ``brute_force_auc``, over the full pair grid at once."""
    m = np.asarray(match_d)[:, None]
    n = np.asarray(nonmatch_d)[None, :]
    wins = np.count_nonzero(m < n) + 0.5 * np.count_nonzero(m == n)
    return wins / (m.size * n.size)
