"""Deterministic seed derivation.

A single root seed fans out into labeled substreams so that every stochastic
stage (init, training draws, per-window sampling, synthetic corpora) is
reproducible and independent of worker-thread count or evaluation order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels: object) -> int:
    """Hash a root seed plus labels into a 64-bit substream seed."""
    text = ":".join([str(int(root))] + [str(l) for l in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(root: int, *labels: object) -> np.random.Generator:
    """A fresh PCG64 generator for the labeled substream."""
    return np.random.default_rng(derive_seed(root, *labels))
