"""Counter-based random numbers for particles.

Every variate is a pure function of (seed, stream, particle id, step, axis):
the words are folded into a 64-bit state with the splitmix64 finaliser,
the top 53 bits give a uniform in (0, 1), and the inverse normal CDF maps
it to a standard normal. Results do not depend on how particles are
scheduled across workers.
"""

from enum import IntEnum

import numpy as np
import numpy.typing as npt
from scipy.special import ndtri

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


class Stream(IntEnum):
    INCREMENT = 0
    SAMPLING = 1


def _words(value: int | npt.ArrayLike) -> npt.NDArray[np.uint64]:
    if isinstance(value, (int, np.integer)):
        return np.atleast_1d(np.array(int(value) & _MASK, dtype=np.uint64))
    return np.atleast_1d(np.asarray(value).astype(np.int64).astype(np.uint64))


def _mix(z: npt.NDArray[np.uint64]) -> npt.NDArray[np.uint64]:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def counter_hash(
    seed: int,
    stream: int,
    particle_ids: npt.ArrayLike,
    step: int,
    axis: int,
) -> npt.NDArray[np.uint64]:
    state = _mix(_words(seed) + GOLDEN_GAMMA)
    with np.errstate(over="ignore"):
        for word in (_words(stream), _words(particle_ids), _words(step), _words(axis)):
            state = _mix(state ^ _mix(word + GOLDEN_GAMMA))
    return state


def uniforms(
    seed: int,
    particle_ids: npt.ArrayLike,
    step: int,
    dim: int,
    stream: Stream = Stream.SAMPLING,
) -> npt.NDArray[np.float64]:
    """Uniforms in the open interval (0, 1), shape (n, dim)."""
    ids = np.atleast_1d(np.asarray(particle_ids))
    out = np.empty((ids.shape[0], dim))
    for axis in range(dim):
        bits = counter_hash(seed, int(stream), ids, step, axis) >> np.uint64(11)
        out[:, axis] = (bits.astype(np.float64) + 0.5) * 2.0**-53
    return out


def gaussian_increments(
    seed: int,
    particle_ids: npt.ArrayLike,
    step: int,
    dim: int,
) -> npt.NDArray[np.float64]:
    """Standard normals for one step of a batch of particles, shape (n, dim)."""
    return ndtri(uniforms(seed, particle_ids, step, dim, Stream.INCREMENT))


def rng_stream(
    seed: int,
    particle_id: int,
    step: int,
    dim: int = 1,
    dt: float | None = None,
) -> npt.NDArray[np.float64]:
    """Gaussian increment vector of one particle at one step.

    Standard normal per axis, or a Brownian increment of variance dt when dt
    is given.
    """
    xi = gaussian_increments(seed, [particle_id], step, dim)[0]
    return xi if dt is None else np.sqrt(dt) * xi
