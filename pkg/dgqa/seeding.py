"""Deterministic seed derivation shared by every stochastic stage."""

import hashlib

import numpy as np

MAX_SEED = 2 ** 63 - 1


def derive_seed(base: int, *parts: object) -> int:
    """
    Derive a child seed from a base seed and a path of identifiers.

    The result depends only on the arguments, never on call order, so a sample
    keeps its seed when the dataset around it is filtered or reordered.
    """
    key = "|".join([str(int(base))] + [str(p) for p in parts]).encode("utf-8")
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, "big") & MAX_SEED


def sample_seed(base: int, index: int) -> int:
    """Per-sample generation seed: base XOR sample index"""
    return (int(base) ^ int(index)) & MAX_SEED


def rng_for(base: int, *parts: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(base, *parts) if parts else int(base))
