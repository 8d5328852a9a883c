"""
Deterministic seed derivation.

Every random draw in a run descends from one master seed through a path of
integers (run, iteration, sample, stream...), so results do not depend on
evaluation order. Agent noise uses counter-based Philox streams keyed by
the rollout seed with the (sub-population, agent) pair in the counter, so
adding agents never reshuffles the noise of existing ones.
"""
import numpy as np

STREAM_ROLLOUT = 1
STREAM_PERTURBATION = 2
STREAM_INIT_POLICY = 3


def derive_seed(master: int, *path: int) -> int:
    """128-bit child seed for `path` under `master`."""
    seq = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(int(p) for p in path))
    low, high = seq.generate_state(2, dtype=np.uint64)
    return int(low) | (int(high) << 64)


def agent_stream(seed: int, sub: int, agent: int) -> np.random.Generator:
    """Noise stream of one agent; draws advance the low counter words (time)."""
    counter = np.array([0, 0, sub, agent], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed) % (1 << 128), counter=counter))
