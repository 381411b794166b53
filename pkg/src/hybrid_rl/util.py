"""Shared helpers: deterministic float formatting and named RNG streams."""

import numpy as np

# Stable stream order; changing it changes every seeded result downstream.
STREAM_NAMES = ("init", "env", "policy", "batch", "disc", "eval", "data")


def fmt_float(x: float) -> str:
    """Format a float64 so that parsing the string recovers it bit-exactly."""
    return f"{float(x):.17g}"


def parse_float(s: str) -> float:
    return float(s)


class RngStreams:
    """Independent named RNG streams spawned from one root seed.

    Keeps consumers decoupled: drawing from one stream never shifts another,
    so e.g. evaluation rollouts cannot perturb training randomness.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        root = np.random.SeedSequence(self.seed)
        children = root.spawn(len(STREAM_NAMES))
        self._streams = {
            name: np.random.default_rng(child)
            for name, child in zip(STREAM_NAMES, children)
        }

    def __getattr__(self, name):
        try:
            return self.__dict__["_streams"][name]
        except KeyError:
            raise AttributeError(name) from None

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            raise ValueError(f"unknown rng stream: {name!r}")
        return self._streams[name]
