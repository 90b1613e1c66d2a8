"""Named random substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("env-reset", "policy-init", "action-sampling", "minibatch-shuffle", "bootstrap")


def substream_seq(seed: int, name: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seq(seed, name))


def substream_int(seed: int, name: str) -> int:
    return int(substream_seq(seed, name).generate_state(1, np.uint32)[0])
