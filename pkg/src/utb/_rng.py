"""Seed streams.

Every random draw in the package comes from ``stream(seed, name, *index)``,
which spawns a child of ``numpy.random.SeedSequence(seed)`` keyed by a fixed
integer per stream name. Streams never share state, so adding draws to one
consumer cannot shift another.

======== === =============================================
name     key  consumer
======== === =============================================
synth    1   synthetic features, treatment and outcomes
folds    2   cross-validation fold shuffling
split    3   train/test split in the ablation harness
boot     4   bootstrap resample for bagging tree ``i``
======== === =============================================
"""

import numpy as np

_STREAMS = {"synth": 1, "folds": 2, "split": 3, "boot": 4}


def stream(seed, name, *index):
    key = (_STREAMS[name],) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
