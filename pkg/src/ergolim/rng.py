"""Counter-based Gaussian noise addressed by (seed, replica, step, component).

Every normal variate is a pure function of its address, so trajectories are
reproducible under any blocking, chunking or thread schedule, and two
trajectories that share an address share the noise exactly (synchronous
coupling).

Layout: the Philox-4x64 generator is keyed by ``(seed, replica)``.  Step ``k``
owns ``ceil(width / 4)`` consecutive counter blocks, i.e. ``stride`` raw 64-bit
words, and component ``c`` of step ``k`` is raw word ``k * stride + c``.  Raw
words are mapped to ``(0, 1)`` with 53-bit resolution and then through the
inverse normal CDF.
"""
from __future__ import annotations

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0 ** -53


def _stride(width: int) -> int:
    return 4 * ((width + 3) // 4)


def _key(seed: int, replica: int) -> np.ndarray:
    return np.array([int(seed) & _MASK64, int(replica) & _MASK64], dtype=np.uint64)


def raw_words(seed: int, replica: int, width: int, k0: int, k1: int) -> np.ndarray:
    """Raw 64-bit words for steps ``k0..k1-1``, shape ``(k1 - k0, stride)``."""
    stride = _stride(width)
    gen = Philox(key=_key(seed, replica), counter=(k0 * stride) // 4)
    return gen.random_raw((k1 - k0) * stride).reshape(k1 - k0, stride)


def normals(seed: int, replica: int, width: int, k0: int, k1: int) -> np.ndarray:
    """Standard normals for one replica, shape ``(k1 - k0, width)``."""
    if k1 < k0 or k0 < 0:
        raise ValueError(f"bad step range [{k0}, {k1})")
    words = raw_words(seed, replica, width, k0, k1)[:, :width]
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
    return ndtri(u)


def normal_block(seed: int, replicas, width: int, k0: int, k1: int) -> np.ndarray:
    """Standard normals for several replicas, shape ``(R, k1 - k0, width)``."""
    replicas = np.atleast_1d(np.asarray(replicas, dtype=np.int64))
    out = np.empty((replicas.size, k1 - k0, width))
    for i, rid in enumerate(replicas):
        out[i] = normals(seed, int(rid), width, k0, k1)
    return out


def brownian_increments(seed: int, replicas, width: int, tau: float,
                        k0: int, k1: int, substeps: int = 1) -> np.ndarray:
    """Brownian increments over coarse steps ``k0..k1-1`` of length ``tau``.

    With ``substeps > 1`` each coarse increment is the sum of ``substeps``
    fine increments of length ``tau / substeps`` read from the fine-step
    addresses, so a coarse path and a fine path with the same seed are driven
    by the same Brownian motion.  Shape ``(R, k1 - k0, width)``.
    """
    if substeps == 1:
        return np.sqrt(tau) * normal_block(seed, replicas, width, k0, k1)
    fine = fine_increments(seed, replicas, width, tau / substeps,
                           k0 * substeps, k1 * substeps)
    return aggregate(fine, substeps)


def fine_increments(seed, replicas, width, tau_fine, j0, j1) -> np.ndarray:
    return np.sqrt(tau_fine) * normal_block(seed, replicas, width, j0, j1)


def aggregate(fine: np.ndarray, substeps: int) -> np.ndarray:
    """Sum consecutive groups of ``substeps`` increments along axis 1."""
    r, n, w = fine.shape
    if n % substeps:
        raise ValueError("fine increments do not tile the coarse steps")
    return fine.reshape(r, n // substeps, substeps, w).sum(axis=2)
