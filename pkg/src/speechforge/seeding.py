"""Per-stage, per-record seed derivation.

Every random draw in the toolkit comes from a seed obtained as::

    SeedSequence(entropy=master_seed, spawn_key=(stage, index)).generate_state(1, uint64)[0]

so record ``i`` of a stage gets the same stream no matter which worker runs
it or in what order.
"""
import numpy as np

STAGE_RIRS = 1
STAGE_MANIFEST = 2
STAGE_SYNTH = 3
STAGE_RIR_PICK = 4
STAGE_ENHANCE = 5
STAGE_SOURCES = 6


def derive_seed(master_seed: int, stage: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stage), int(index)))
    return int(ss.generate_state(1, np.uint64)[0])


def derive_rng(master_seed: int, stage: int, index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, stage, index))
