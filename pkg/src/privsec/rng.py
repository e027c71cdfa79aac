"""Seed discipline: one master seed, independent named streams per component.

Component streams are derived by hashing the component name into a spawn
key, so adding or removing a component never perturbs the randomness any
other component sees.
"""

import hashlib

import numpy as np

__all__ = ["component_rng", "component_int_seed"]


def _name_key(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def component_rng(master_seed: int, name: str) -> np.random.Generator:
    """Generator for component `name`, independent of all other names."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(_name_key(name),))
    return np.random.default_rng(seq)


def component_int_seed(master_seed: int, name: str, bits: int = 63) -> int:
    """Plain integer seed for consumers that do not take numpy generators."""
    rng = component_rng(master_seed, name)
    return int(rng.integers(0, 1 << bits))
