"""Named random streams derived from one master seed."""

import zlib

import numpy as np


def substream(seed, purpose, *index):
    """Independent generator for ``purpose`` (e.g. ``"shadowing"``) under ``seed``.

    Extra integer ``index`` values (episode, deployment number, ...) select
    further independent streams for the same purpose.
    """
    key = (zlib.crc32(purpose.encode()),) + tuple(int(i) for i in index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
