"""Integer factorization helpers used by the tiling representation.

Tile factors are always exact divisors, so everything here works on prime
signatures. Counts use the stars-and-bars identity: the number of ordered
ways to write n = p1^e1 * p2^e2 * ... as a product of k positive factors is
prod_i C(ei + k - 1, k - 1).
"""

import math
import random
from functools import lru_cache


@lru_cache(maxsize=None)
def prime_factorization(n: int) -> tuple[tuple[int, int], ...]:
    """Prime signature of n as ((prime, exponent), ...), ascending primes."""
    if n < 1:
        raise ValueError(f"cannot factor {n}")
    out = []
    d = 2
    while d * d <= n:
        if n % d == 0:
            e = 0
            while n % d == 0:
                n //= d
                e += 1
            out.append((d, e))
        d += 1 if d == 2 else 2
    if n > 1:
        out.append((n, 1))
    return tuple(out)


def prime_multiset(n: int) -> list[int]:
    """All prime factors of n with multiplicity, ascending."""
    out = []
    for p, e in prime_factorization(n):
        out.extend([p] * e)
    return out


def divisors(n: int) -> list[int]:
    small, large = [], []
    i = 1
    while i * i <= n:
        if n % i == 0:
            small.append(i)
            if i != n // i:
                large.append(n // i)
        i += 1
    return small + large[::-1]


def count_ordered_factorizations(n: int, k: int) -> int:
    """Number of k-tuples of positive integers with product n."""
    if k < 1:
        raise ValueError("need at least one position")
    total = 1
    for _, e in prime_factorization(n):
        total *= math.comb(e + k - 1, k - 1)
    return total


def ordered_factorizations(n: int, k: int):
    """Yield every k-tuple of positive integers with product n."""
    if k == 1:
        yield (n,)
        return
    for d in divisors(n):
        for rest in ordered_factorizations(n // d, k - 1):
            yield (d,) + rest


def _random_weak_composition(e: int, k: int, rng: random.Random) -> list[int]:
    # Stars and bars: choose k-1 bar slots among e+k-1, uniform over the
    # C(e+k-1, k-1) weak compositions of e into k parts.
    if k == 1:
        return [e]
    if e == 0:
        return [0] * k
    bars = sorted(rng.sample(range(e + k - 1), k - 1))
    parts = []
    prev = -1
    for b in bars:
        parts.append(b - prev - 1)
        prev = b
    parts.append(e + k - 2 - prev)
    return parts


def random_ordered_factorization(n: int, k: int, rng: random.Random) -> tuple[int, ...]:
    """Uniform sample over the k-tuples of positive integers with product n.

    Prime exponents distribute independently, so sampling a uniform weak
    composition per prime is uniform over the whole set.
    """
    factors = [1] * k
    for p, e in prime_factorization(n):
        for pos, cnt in enumerate(_random_weak_composition(e, k, rng)):
            factors[pos] *= p ** cnt
    return tuple(factors)
