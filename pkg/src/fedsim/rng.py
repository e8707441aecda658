"""Deterministic RNG substream derivation.

Every source of randomness in a run is a dedicated PCG64 stream keyed by
(master seed, purpose tag, device id). Participation draws therefore never
share a stream with gradient noise, so all algorithms see the identical
active-set sequence for a fixed seed, and changing one device's parameters
never perturbs another device's draws.
"""

from __future__ import annotations

import numpy as np

# Purpose tags. Values are arbitrary but frozen: changing them changes
# every seeded trajectory.
PARTICIPATION = 1
GRADIENT_NOISE = 2
SUBSET_SAMPLING = 3


def substream(seed: int, purpose: int, device: int = 0) -> np.random.Generator:
    """Return the dedicated generator for (seed, purpose, device)."""
    ss = np.random.SeedSequence([int(seed), int(purpose), int(device)])
    return np.random.Generator(np.random.PCG64(ss))


def device_noise_streams(seed: int, n_devices: int) -> list[np.random.Generator]:
    """One gradient-noise stream per device, all derived from ``seed``."""
    return [substream(seed, GRADIENT_NOISE, i) for i in range(n_devices)]


def generator_state(gen: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    return gen.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    """Rebuild a generator from a ``generator_state`` snapshot."""
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
