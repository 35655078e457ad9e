"""Differential-privacy primitives.

Seeded random streams, Laplace noise, exponential-mechanism probabilities,
categorical sampling, and min-max normalization. Everything here is
deterministic given an :class:`Rng`, which is the only source of randomness
in the package.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError

PROB_SUM_TOL = 1e-9


class Rng:
    """Deterministic random stream: PCG64 keyed by (seed, derivation path).

    The same seed and path produce the same draw sequence on every platform.
    ``child(*key)`` derives an independent stream; perturbation uses one
    child per (document index, token position) so documents are independent
    yet replayable.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        if not 0 <= int(seed) < 2**64:
            raise ContractError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        # the path length disambiguates entropy tuples: SeedSequence ignores
        # trailing zero words, so (seed, 1, 0) must not collide with (seed,)
        seq = np.random.SeedSequence((self.seed, len(self.path)) + self.path)
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def child(self, *key: int) -> "Rng":
        """Derive an independent stream for the given integer key."""
        return Rng(self.seed, self.path + tuple(key))

    def uniform(self, size: int | None = None):
        """Uniform draws on [0, 1): a float when size is None, else an array."""
        return self._gen.random(size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"


def sample_laplace_vector(dim: int, scale: float, rng: Rng) -> np.ndarray:
    """Draw ``dim`` i.i.d. Laplace(0, scale) values by inverse CDF.

    Uses y = -scale * sgn(u) * ln(1 - 2|u|) with u uniform on (-0.5, 0.5);
    one uniform per coordinate keeps the stream reproducible.
    """
    if scale <= 0 or not math.isfinite(scale):
        raise ContractError(f"Laplace scale must be positive and finite, got {scale}")
    if dim < 1:
        raise ContractError(f"dim must be a positive integer, got {dim}")
    u = rng.uniform(dim)
    # rng.uniform is [0, 1); nudge exact zeros so u stays inside (-0.5, 0.5)
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u) - 0.5
    return -scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))


def exp_mechanism_probs(scores, epsilon: float, delta_u: float) -> np.ndarray:
    """Exponential-mechanism distribution over candidates.

    probs[i] = exp(eps * s_i / (2 * delta_u)) / sum_j exp(eps * s_j / (2 * delta_u)),
    computed with the max-shift so large scores cannot overflow.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ContractError("scores must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(s)):
        raise ContractError("scores must all be finite")
    if epsilon < 0 or not math.isfinite(epsilon):
        raise ContractError(f"epsilon must be >= 0, got {epsilon}")
    if delta_u <= 0 or not math.isfinite(delta_u):
        raise ContractError(f"delta_u must be positive, got {delta_u}")
    z = epsilon * (s - s.max()) / (2.0 * delta_u)
    w = np.exp(z)
    return w / w.sum()


def require_probability_vector(probs) -> np.ndarray:
    """Validate entries in [0, 1] summing to 1 within tolerance."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ContractError("probability vector must be a non-empty 1-D sequence")
    if np.any(p < -PROB_SUM_TOL) or np.any(p > 1.0 + PROB_SUM_TOL):
        raise ContractError("probabilities must lie in [0, 1]")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ContractError(f"probabilities must sum to 1, got {total}")
    return p


def sample_categorical(probs, rng: Rng) -> int:
    """Sample an index with the given probabilities (inverse CDF over cumsums)."""
    p = require_probability_vector(probs)
    cum = np.cumsum(p)
    u = rng.uniform()
    idx = int(np.searchsorted(cum, u, side="right"))
    # float round-off can leave cum[-1] a hair below u
    return min(idx, p.size - 1)


def minmax_normalize(values) -> np.ndarray:
    """Map values affinely onto [0, 1]; a constant input maps to all zeros."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ContractError("values must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(v)):
        raise ContractError("values must all be finite")
    lo = v.min()
    span = v.max() - lo
    if span == 0.0:
        return np.zeros_like(v)
    return (v - lo) / span
