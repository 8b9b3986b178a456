"""
Seeded random streams. Every stage owns a named seed; sub-streams are
derived from (stage seed, key...) so results never depend on call order.
"""

from typing import Iterable

import numpy as np
import torch


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, *keys)"""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def household_stream(seed: int, household_id: int) -> np.random.Generator:
    return stream(seed, household_id)


def split_streams(seed: int, n_chunks: int) -> list:
    """Pre-split a stage stream into per-chunk generators for parallel work"""
    children = np.random.SeedSequence(int(seed)).spawn(n_chunks)
    return [np.random.default_rng(child) for child in children]


def seed_torch(seed: int) -> torch.Generator:
    """Seed torch's global generator and return a dedicated one"""
    torch.manual_seed(int(seed))
    generator = torch.Generator()
    generator.manual_seed(int(seed))
    return generator


def draw_uniforms(seed: int, household_ids: Iterable[int], shape: tuple) -> np.ndarray:
    """Stack of per-household uniform draws, shape [n_households, *shape]"""
    draws = [household_stream(seed, hid).random(shape) for hid in household_ids]
    if not draws:
        return np.empty((0, *shape))
    return np.stack(draws)
