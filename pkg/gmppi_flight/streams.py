"""Counter-based random streams keyed by (seed, iteration, rollout).

Each rollout of an iteration owns a Philox stream, so its draws never depend on how many rollouts,
iterations or threads came before it. Streams are partitioned by the high counter word.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def rollout_generator(seed: int, iteration: int, rollout: int) -> np.random.Generator:
    counter = np.array([0, 0, 0, rollout & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, iteration & _MASK64], counter=counter))


@dataclass(frozen=True)
class IterationNoise:
    """Standard-normal draws of one iteration.

    ``command`` has shape ``(n_random, n_steps, n_inputs)`` and ``gains`` ``(n_se3, n_gains)``.
    """

    command: np.ndarray
    gains: np.ndarray


def draw_iteration_noise(
    seed: int,
    iteration: int,
    n_random: int,
    n_steps: int,
    n_se3: int,
    n_inputs: int = 3,
    n_gains: int = 6,
) -> IterationNoise:
    """Draw every rollout's noise on the calling thread.

    Random rollouts use stream ids ``0 .. n_random-1``; geometric rollouts continue after them.
    """
    command = np.empty((n_random, n_steps, n_inputs))
    for k in range(n_random):
        command[k] = rollout_generator(seed, iteration, k).standard_normal((n_steps, n_inputs))
    gains = np.empty((n_se3, n_gains))
    for k in range(n_se3):
        gains[k] = rollout_generator(seed, iteration, n_random + k).standard_normal(n_gains)
    return IterationNoise(command=command, gains=gains)
