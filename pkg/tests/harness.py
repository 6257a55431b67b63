"""Shared helpers for the test suite."""


class MirroredRng:
    """Generator wrapper whose Beta and binomial draws are label-flipped.

    ``beta(a, b)`` returns ``1 - beta(b, a)`` and ``binomial(n, p)`` returns
    ``n - binomial(n, 1 - p)``, each from the wrapped stream, so a chain on
    flipped data consumes exactly the same uniforms as the original.
    """

    def __init__(self, rng):
        self._rng = rng

    def permutation(self, n):
        return self._rng.permutation(n)

    def integers(self, lo, hi):
        return self._rng.integers(lo, hi)

    def beta(self, a, b):
        return 1.0 - self._rng.beta(b, a)

    def binomial(self, n, p):
        return n - self._rng.binomial(n, 1.0 - p)
