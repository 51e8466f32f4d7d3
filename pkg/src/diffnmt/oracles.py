"""Slow reference computations used by tests and ``diffnmt verify``.

Nothing here imports the tensor code paths; every quantity is rebuilt from
plain Python loops over explicit transition kernels.
"""

from __future__ import annotations

import math
from collections import Counter

import mpmath


def step_kernel(beta: float, K: int) -> list[list[float]]:
    """Row-stochastic matrix M[i][j] = q(x_t = j | x_{t-1} = i)."""
    return [[(1.0 - beta) * (i == j) + beta / K for j in range(K)] for i in range(K)]


def chain_marginal(x0: int, t: int, betas, K: int) -> list[float]:
    """q(x_t | x_0) by pushing a point mass through t explicit kernels."""
    dist = [float(k == x0) for k in range(K)]
    for s in range(t):
        M = step_kernel(betas[s], K)
        dist = [sum(dist[i] * M[i][j] for i in range(K)) for j in range(K)]
    return dist


def bayes_posterior(x_t: int, x0_dist, t: int, betas, K: int) -> list[float]:
    """q(x_{t-1} | x_t, x_0) by enumerating x_{t-1} and applying Bayes' rule.

    ``x0_dist`` may be a point mass (an int) or a distribution; soft inputs are
    handled by mixing the prior over x_{t-1} before conditioning on x_t.
    """
    if isinstance(x0_dist, int):
        x0_dist = [float(k == x0_dist) for k in range(K)]
    prior = [0.0] * K
    for x0, w in enumerate(x0_dist):
        marg = chain_marginal(x0, t - 1, betas, K)
        for k in range(K):
            prior[k] += w * marg[k]
    # soft x0: the closed form mixes (1 - ab)/K with ab * x0, which equals the mixture above
    M = step_kernel(betas[t - 1], K)
    joint = [M[k][x_t] * prior[k] for k in range(K)]
    z = sum(joint)
    return [j / z for j in joint]


def kl(p, q, floor: float = 1e-12) -> float:
    return sum(pi * (math.log(pi) - math.log(max(qi, floor))) for pi, qi in zip(p, q) if pi > 0)


def vb_term(y0, y_t, x0_hat, t: int, betas) -> float:
    """One term of the negative bound, summed over positions, from first principles."""
    total = 0.0
    for pos, (a, b) in enumerate(zip(y0, y_t)):
        probs = x0_hat[pos]
        K = len(probs)
        if t == 1:
            total -= math.log(max(probs[a], 1e-12))
        else:
            total += kl(bayes_posterior(b, a, t, betas, K), bayes_posterior(b, list(probs), t, betas, K))
    return total


def cosine_alpha_bar_hp(T: int, s: float = 0.008, beta_min: float = 1e-6,
                        beta_max: float = 0.999, dps: int = 40) -> list[float]:
    """Clipped cosine alpha_bar for t = 1..T evaluated with 40-digit arithmetic."""
    with mpmath.workdps(dps):
        s = mpmath.mpf(s)
        f = [mpmath.cos(((mpmath.mpf(t) / T + s) / (1 + s)) * mpmath.pi / 2) ** 2 for t in range(T + 1)]
        out, ab = [], mpmath.mpf(1)
        for t in range(1, T + 1):
            beta = 1 - (f[t] / f[0]) / (f[t - 1] / f[0])
            beta = min(max(beta, mpmath.mpf(beta_min)), mpmath.mpf(beta_max))
            ab *= 1 - beta
            out.append(float(ab))
    return out


def char_ngrams(text: str, n: int) -> Counter:
    chars = "".join(text.split())
    return Counter(chars[i:i + n] for i in range(len(chars) - n + 1))


def chrf_sentence(hyp: str, ref: str, max_n: int = 6, beta: float = 2.0) -> float:
    """chrF by explicit n-gram enumeration: mean of per-order F_beta over orders present in both."""
    scores = []
    for n in range(1, max_n + 1):
        h, r = char_ngrams(hyp, n), char_ngrams(ref, n)
        if not h or not r:
            continue
        match = sum(min(c, r[g]) for g, c in h.items())
        p, rec = match / sum(h.values()), match / sum(r.values())
        b2 = beta * beta
        scores.append(0.0 if match == 0 else (1 + b2) * p * rec / (b2 * p + rec))
    return 100.0 * sum(scores) / len(scores) if scores else 0.0


def levenshtein(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]
