"""Dense math kernels and the deterministic random generator.

Arrays are plain float64 numpy arrays, row-major, rank 1 to 3. Everything
here is a pure function of its inputs; nothing mutates its arguments.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_INV_2_53 = 1.0 / (1 << 53)


class Rng:
    """splitmix64 generator.

    The algorithm is fixed on purpose: the same seed yields the same stream
    on every platform, which makes parameter initialization, shuffling, and
    synthetic data reproducible byte for byte.
    """

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """One double in [0, 1), built from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def normal(self) -> float:
        """One standard normal draw (Box-Muller, cosine branch)."""
        u1 = 1.0 - self.uniform()  # (0, 1]: keeps the log finite
        u2 = self.uniform()
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi] inclusive."""
        if hi < lo:
            raise ValueError(f"bad range: [{lo}, {hi}]")
        return lo + self.next_u64() % (hi - lo + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            items[i], items[j] = items[j], items[i]


def rand_uniform(rng: Rng, shape, lo: float, hi: float) -> np.ndarray:
    """Array of uniform draws in [lo, hi), deterministic per seed."""
    if not lo < hi:
        raise ValueError(f"bad range: lo={lo} must be < hi={hi}")
    n = int(np.prod(shape))
    vals = np.empty(n)
    for i in range(n):
        vals[i] = rng.uniform()
    return (lo + (hi - lo) * vals).reshape(shape)


def rand_normal(rng: Rng, shape, sigma: float = 1.0) -> np.ndarray:
    """Array of centered normal draws with standard deviation sigma."""
    n = int(np.prod(shape))
    vals = np.empty(n)
    for i in range(n):
        vals[i] = rng.normal()
    return (sigma * vals).reshape(shape)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a 2-D [M, K] by a 2-D [K, N]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction, stable for any finite input."""
    m = np.asarray(m)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def relu(m: np.ndarray) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(np.asarray(m, dtype=float), 0.0)


def row_stats(m: np.ndarray):
    """Per-row mean and population variance (divide by the row length)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[1] < 1:
        raise ValueError(f"row_stats needs a non-empty rank-2 array, got {m.shape}")
    mean = m.mean(axis=1)
    centered = m - mean[:, None]
    var = (centered * centered).mean(axis=1)
    return mean, var
