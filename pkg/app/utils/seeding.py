import numpy as np

# stream tags keep independent consumers of one seed from sharing draws
STREAM_PARTITION = 1
STREAM_EVAL = 2
STREAM_HOLDOUT = 3
STREAM_COEFFS = 4
STREAM_BATCHES = 5
STREAM_PROBES = 6
STREAM_FIT = 7
STREAM_INIT = 8

_MASK64 = (1 << 64) - 1


def keyed_rng(seed: int, stream: int, *keys: int) -> np.random.Generator:
    """Counter-based generator: the draws depend only on (seed, stream, keys)."""
    entropy = [int(seed) & _MASK64, int(stream)] + [int(k) & _MASK64 for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))
