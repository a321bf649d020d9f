"""Dense complex linear algebra and the portable random-number stream.

Matrices are plain ``numpy`` arrays (``complex128`` for channel/precoder
quantities, ``float64`` elsewhere).  The helpers here add the shape and
conditioning contracts the rest of the package relies on.

Random numbers
--------------
:class:`Rng` wraps the counter-based Philox-4x64 bit generator from
``numpy.random`` and derives every variate from its raw 64-bit output:

* uniform ``[0, 1)``: top 53 bits of one raw word, times ``2**-53``;
* standard normal: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  yielding ``sqrt(-2 ln(1-u1)) cos(2 pi u2)`` then ``... sin(2 pi u2)``;
  an odd request discards the trailing sine value;
* circular complex normal with variance ``v``: real parts from the first
  half of a block of ``2n`` normals, imaginary parts from the second half,
  both scaled by ``sqrt(v/2)``.

Raw Philox words are fixed by the algorithm, so a seed reproduces the same
draws on every platform and numpy release (stream version ``RNG_VERSION``).
"""
from __future__ import annotations

import numpy as np
import scipy.linalg

__all__ = [
    "RNG_VERSION",
    "ContractError",
    "SingularSystemError",
    "RankDeficientError",
    "Rng",
    "matmul",
    "solve_hermitian",
    "gram_schmidt_orthogonalize",
    "frob_norm_diff",
]

RNG_VERSION = "philox4x64-bm-1"

_MAX_CONDITION = 1e12


class ContractError(ValueError):
    """Inputs violate an operation's shape or domain precondition."""


class SingularSystemError(ArithmeticError):
    """A linear system is too ill-conditioned to solve reliably."""


class RankDeficientError(ArithmeticError):
    """Vectors handed to Gram-Schmidt are (numerically) linearly dependent."""


class Rng:
    """Seeded, portable random stream (see module docstring)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._bitgen = np.random.Philox(key=[self.seed, self.stream])

    def spawn(self, stream: int) -> "Rng":
        """Independent stream sharing this seed."""
        return Rng(self.seed, stream)

    def raw(self, n: int) -> np.ndarray:
        return self._bitgen.random_raw(int(n))

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, scale: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        radius = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        angle = 2.0 * np.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).ravel()[:n]
        z = scale * z
        return float(z[0]) if size is None else z.reshape(size)

    def complex_normal(self, size, variance: float = 1.0) -> np.ndarray:
        n = int(np.prod(size))
        z = self.normal(2 * n) * np.sqrt(variance / 2.0)
        return (z[:n] + 1j * z[n:]).reshape(size)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ContractError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def solve_hermitian(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a x = b`` for Hermitian positive definite ``a``.

    Cholesky first; if the factorization fails the pivoted LU solver is
    used instead.  Raises :class:`SingularSystemError` when the condition
    number exceeds 1e12 or any entry is non-finite.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractError(f"expected a square matrix, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise ContractError(f"right-hand side {b.shape} does not match {a.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularSystemError("non-finite entries in linear system")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise SingularSystemError(f"condition number {cond:.3g} exceeds {_MAX_CONDITION:g}")
    try:
        x = scipy.linalg.cho_solve(scipy.linalg.cho_factor(a, lower=True), b)
    except np.linalg.LinAlgError:
        x = scipy.linalg.solve(a, b)
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solution has non-finite entries")
    return x


def gram_schmidt_orthogonalize(vectors, tol: float = 1e-12) -> list[np.ndarray]:
    """Modified Gram-Schmidt with one re-orthogonalization pass.

    Output vectors keep the norm of the component left after projection
    (they are orthogonal, not normalized), so an already orthogonal input
    comes back unchanged.
    """
    vs = [np.array(v, dtype=np.complex128).ravel() for v in vectors]
    if not vs:
        return []
    length = vs[0].size
    if any(v.size != length for v in vs):
        raise ContractError("vectors must share one length")
    if len(vs) > length:
        raise ContractError(f"{len(vs)} vectors cannot be orthogonal in dimension {length}")
    out: list[np.ndarray] = []
    for v in vs:
        scale = np.linalg.norm(v)
        w = v.copy()
        for _ in range(2):
            for u in out:
                w -= (np.vdot(u, w) / np.vdot(u, u)) * u
        if np.linalg.norm(w) < tol * max(scale, 1.0):
            raise RankDeficientError("input vectors are linearly dependent")
        out.append(w)
    return out


def frob_norm_diff(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
