import secrets

import chex
import jax
import jax.numpy as jnp
import numpy as np

# independent streams derived from one scenario seed
NET_STREAM = 0
ENTROPY_STREAM = 1

_MASK31 = 2**31 - 1


class SeedStream:
    """
    Deterministic draws backed by a ``jax.random`` key.

    Draws are buffered: every refill splits the key once and pulls ``buffer_words`` 32-bit words,
    so the per-draw cost stays low while the sequence remains a pure function of the seed.
    """

    def __init__(self, seed: int, stream: int = NET_STREAM, epoch: int = 0, buffer_words: int = 4096):
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        # 31-bit pieces keep every value inside int32 when x64 is disabled
        key = jax.random.PRNGKey(seed & _MASK31)
        key = jax.random.fold_in(key, (seed >> 31) & _MASK31)
        key = jax.random.fold_in(key, seed >> 62)
        key = jax.random.fold_in(key, stream)
        self._key: chex.PRNGKey = jax.random.fold_in(key, epoch)
        self._buffer_words = buffer_words
        self._buffer = b""
        self._pos = 0

    def _refill(self) -> None:
        self._key, sub = jax.random.split(self._key)
        words = jax.random.bits(sub, shape=(self._buffer_words,), dtype=jnp.uint32)
        self._buffer = np.asarray(words, dtype=">u4").tobytes()
        self._pos = 0

    def token_bytes(self, n: int) -> bytes:
        out = bytearray()
        while len(out) < n:
            if self._pos >= len(self._buffer):
                self._refill()
            take = min(n - len(out), len(self._buffer) - self._pos)
            out += self._buffer[self._pos:self._pos + take]
            self._pos += take
        return bytes(out)

    def _word(self) -> int:
        return int.from_bytes(self.token_bytes(4), "big")

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in the closed range [low, high]."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        return low + self._word() % (high - low + 1)

    def uniform(self) -> float:
        """Uniform float in [0, 1)."""
        return self._word() / 2**32


class SystemEntropy:
    """Operating-system randomness, for use outside reproducible simulations."""

    def token_bytes(self, n: int) -> bytes:
        return secrets.token_bytes(n)
