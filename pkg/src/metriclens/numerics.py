"""Float64 array primitives and the seeded random stream shared by all modules.

Arrays are row-major float64 and rows are batch items. Randomness comes from
splitmix64, a counter-based 64-bit generator (Steele, Lea & Flood, the
algorithm behind Java's SplittableRandom), so the integer and uniform streams
of a given seed are reproducible bit for bit on any platform. Gaussian draws
are Box-Muller over those uniforms and are exact up to libm rounding of
log/cos/sin.
"""

import numpy as np

__all__ = [
    "DegenerateVectorError",
    "NORM_EPS",
    "Rng",
    "ShapeError",
    "derive_seed",
    "group_max_reduce",
    "l2_normalize_scale",
    "matmul",
    "mix64",
    "pairwise_sq_euclidean",
]

NORM_EPS = 1e-12

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class DegenerateVectorError(ValueError):
    """A vector whose norm is too close to zero to normalize."""


def mix64(x: int) -> int:
    """splitmix64 output function on a 64-bit value."""
    x &= _M64
    x ^= x >> 30
    x = (x * _MIX_A) & _M64
    x ^= x >> 27
    x = (x * _MIX_B) & _M64
    return x ^ (x >> 31)


def derive_seed(master: int, label: str) -> int:
    """Stable sub-seed for a named stream, decorrelated from the master seed."""
    h = 0xCBF29CE484222325
    for byte in label.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _M64
    return mix64((int(master) & _M64) ^ h)


class Rng:
    """Deterministic counter-based splitmix64 stream.

    Output i is ``mix64(seed + (i + 1) * GOLDEN)``, which lets whole blocks
    of draws be produced vectorized without losing the sequential contract.
    Instances are single-owner: never share one across concurrent callers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _M64
        self._drawn = 0

    def _raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit outputs (uint64 array)."""
        idx = np.arange(self._drawn + 1, self._drawn + n + 1, dtype=np.uint64)
        self._drawn += n
        z = np.uint64(self.seed) + idx * np.uint64(_GOLDEN)
        z ^= z >> np.uint64(30)
        z *= np.uint64(_MIX_A)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_MIX_B)
        return z ^ (z >> np.uint64(31))

    def _uniform_block(self, n: int) -> np.ndarray:
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform(self, size: int | None = None):
        """Uniform float64 in [0, 1); a scalar when size is None."""
        u = self._uniform_block(1 if size is None else int(size))
        return float(u[0]) if size is None else u

    def normal(self, mean: float, std: float, size) -> np.ndarray:
        """Draws from N(mean, std^2) via Box-Muller; std may be zero."""
        if std < 0:
            raise ValueError("std must be >= 0")
        shape = (int(size),) if np.isscalar(size) else tuple(int(s) for s in size)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        half = (n + 1) // 2
        # u1 is shifted into (0, 1] so log(u1) stays finite.
        u1 = ((self._raw(half) >> np.uint64(11)).astype(np.float64) + 1.0) * _INV_2_53
        u2 = self._uniform_block(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]
        return (mean + std * z).reshape(shape)

    def integers(self, upper: int, size: int | None = None):
        """Uniform integers in [0, upper); bias is O(upper / 2^53)."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        u = self._uniform_block(1 if size is None else int(size))
        out = np.minimum((u * upper).astype(np.int64), upper - 1)
        return int(out[0]) if size is None else out

    def choice(self, n: int, k: int, replace: bool = False) -> np.ndarray:
        """k indices from range(n); partial Fisher-Yates when without replacement."""
        if replace:
            return self.integers(n, size=k)
        if k > n:
            raise ValueError(f"cannot draw {k} of {n} without replacement")
        pool = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self.integers(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k].copy()

    def permutation(self, n: int) -> np.ndarray:
        return self.choice(n, n)


def _as_2d(x, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-d, got {a.ndim}-d")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product with explicit conformance checking."""
    a2 = _as_2d(a, "a")
    b2 = _as_2d(b, "b")
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"cannot multiply {a2.shape} by {b2.shape}")
    return a2 @ b2


def l2_normalize_scale(x, s: float) -> np.ndarray:
    """Rescale a vector, or each row of a matrix, to magnitude s."""
    if s <= 0:
        raise ValueError("scale must be positive")
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        norm = float(np.linalg.norm(a))
        if norm <= NORM_EPS:
            raise DegenerateVectorError(f"norm {norm:g} too small to normalize")
        return (s / norm) * a
    if a.ndim != 2:
        raise ShapeError(f"expected vector or matrix, got {a.ndim}-d")
    norms = np.linalg.norm(a, axis=1)
    if np.any(norms <= NORM_EPS):
        bad = int(np.argmin(norms))
        raise DegenerateVectorError(f"row {bad} has norm {norms[bad]:g}")
    return a * (s / norms)[:, None]


def pairwise_sq_euclidean(x, y) -> np.ndarray:
    """out[i, j] = squared Euclidean distance between row i of x and row j of y."""
    a = _as_2d(x, "x")
    b = _as_2d(y, "y")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"column mismatch: {a.shape[1]} vs {b.shape[1]}")
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    if a is b:
        # same rows on both sides: force exact symmetry and a zero diagonal
        sq = 0.5 * (sq + sq.T)
        np.fill_diagonal(sq, 0.0)
    return sq


def group_max_reduce(x, target_dim: int) -> np.ndarray:
    """Max over contiguous equal-length groups along the last axis."""
    a = np.asarray(x, dtype=np.float64)
    if target_dim <= 0:
        raise ValueError("target_dim must be positive")
    n = a.shape[-1]
    if n % target_dim != 0:
        raise ShapeError(f"length {n} not divisible by target_dim {target_dim}")
    group = n // target_dim
    return a.reshape(a.shape[:-1] + (target_dim, group)).max(axis=-1)
