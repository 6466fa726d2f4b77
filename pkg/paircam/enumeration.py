"""Brute-force reference: enumerate every pair placement and thinning outcome.

Exponential in the pair number; meant for toy sensors of a few pixels.
"""

import itertools
from collections import defaultdict

import numpy as np


def placements(gamma, m):
    """Yield (probability, photon pixels) for every ordered placement of m pairs."""
    gamma = np.asarray(gamma)
    n = gamma.shape[0]
    for cells in itertools.product(range(n * n), repeat=m):
        probability = 1.0
        pixels = []
        for cell in cells:
            first, second = divmod(cell, n)
            probability *= gamma[first, second]
            pixels += [first, second]
        yield probability, pixels


def thinning_table(n_max, eta):
    """P(k detected | n photons) by summing over every detect/miss pattern."""
    table = np.zeros((n_max + 1, n_max + 1))
    for n in range(n_max + 1):
        for pattern in itertools.product((0, 1), repeat=n):
            k = sum(pattern)
            table[n, k] += eta**k * (1 - eta) ** (n - k)
    return table


def photon_counts(gamma, pixels, m):
    """Distribution of photon numbers at the given pixels as a dict."""
    distribution = defaultdict(float)
    for probability, hits in placements(gamma, m):
        key = tuple(hits.count(p) for p in pixels)
        distribution[key] += probability
    return dict(distribution)


def electron_counts(gamma, pixels, eta, m):
    """Distribution of photoelectron numbers at the given pixels as a dict."""
    thinning = thinning_table(2 * m, eta)
    distribution = defaultdict(float)
    for photons, probability in photon_counts(gamma, pixels, m).items():
        for electrons in itertools.product(*(range(n + 1) for n in photons)):
            weight = probability
            for n, k in zip(photons, electrons):
                weight *= thinning[n, k]
            distribution[electrons] += weight
    return dict(distribution)
