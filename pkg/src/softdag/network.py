"""Layered selection network: fixed wiring plus trainable softmax rows.

A network of depth ``L`` stacks ``L + 1`` levels of basis applications.
Each level has an arguments sublayer (one selection row per argument slot)
and an images sublayer (one node per basis occurrence, consuming a fixed
contiguous run of argument slots).  Every selection row holds one raw
weight per visible source and induces a categorical distribution through
a temperature-controlled softmax; the output rows use their own, usually
higher, temperature.

With skip connections the sources visible to level ``p`` are the inputs
and constants followed by the images of all earlier levels; the output
rows see everything.  Without skip connections each level sees only the
previous level's images (level 0 sees the inputs and constants) and the
outputs see only the last images.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .bases import BasisFunction, resolve_bases

__all__ = [
    "ConfigError",
    "WeightsFormatError",
    "NetworkConfig",
    "Network",
    "build_network",
    "parameter_count",
    "softmax_row",
    "softmax_rows",
    "save_network",
    "load_network",
]

_WEIGHTS_MAGIC = "softdag-weights"
_WEIGHTS_VERSION = 1


class ConfigError(ValueError):
    """Invalid network or experiment configuration."""


class WeightsFormatError(ValueError):
    """A serialized weights file is malformed or incompatible."""


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description.

    ``bases`` lists basis occurrences by name; the same list is reused at
    every level, and names may repeat.  ``constants`` are appended to the
    inputs as extra leaf sources.
    """

    bases: tuple[str, ...]
    input_count: int
    constants: tuple[float, ...] = ()
    output_count: int = 1
    depth: int = 1
    temperature: float = 1.0
    last_layer_temperature: float = 1.0
    skip_connections: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "bases", tuple(str(b).upper() for b in self.bases))
        object.__setattr__(self, "constants", tuple(float(c) for c in self.constants))
        if not self.bases:
            raise ConfigError("bases list is empty")
        if self.input_count < 0:
            raise ConfigError("input_count must be >= 0")
        if self.input_count + len(self.constants) < 1:
            raise ConfigError("need at least one input or constant")
        if self.output_count < 1:
            raise ConfigError("output_count must be >= 1")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not (self.temperature > 0 and self.last_layer_temperature > 0):
            raise ConfigError("temperatures must be positive")

    def to_json_dict(self) -> dict:
        return {
            "bases": list(self.bases),
            "input_count": self.input_count,
            "constants": list(self.constants),
            "output_count": self.output_count,
            "depth": self.depth,
            "temperature": self.temperature,
            "last_layer_temperature": self.last_layer_temperature,
            "skip_connections": self.skip_connections,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            bases=tuple(d["bases"]),
            input_count=int(d["input_count"]),
            constants=tuple(d["constants"]),
            output_count=int(d["output_count"]),
            depth=int(d["depth"]),
            temperature=float(d["temperature"]),
            last_layer_temperature=float(d["last_layer_temperature"]),
            skip_connections=bool(d["skip_connections"]),
        )


def softmax_row(weights, temperature: float) -> np.ndarray:
    """Temperature softmax of one weight row; stable under max subtraction."""
    z = np.asarray(weights, dtype=np.float64) / float(temperature)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_rows(matrix: np.ndarray, temperature: float) -> np.ndarray:
    """Row-wise temperature softmax of a weight matrix."""
    z = np.asarray(matrix, dtype=np.float64) / float(temperature)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class Network:
    """Weight store plus the fixed argument-to-image wiring.

    Weights are stored row-major per selection row, so a sampled edge is
    addressed as ``(level, row, source_index)``.  ``weights[p]`` has shape
    ``(M, arg_source_count(p))`` for levels ``p = 0..depth``;
    ``output_weights`` has shape ``(output_count, output_source_count())``.
    All weights initialize to 1.0, which makes every row exactly uniform.
    """

    def __init__(
        self,
        config: NetworkConfig,
        registry: Mapping[str, BasisFunction] | None = None,
    ):
        self.config = config
        self.bases = resolve_bases(config.bases, registry)
        # live temperatures; a training-time schedule may adjust them
        self.temperature = config.temperature
        self.last_layer_temperature = config.last_layer_temperature
        offsets = [0]
        for b in self.bases:
            offsets.append(offsets[-1] + b.arity)
        self.slot_offset = tuple(offsets)
        self.M = offsets[-1]
        self.N = len(self.bases)
        self.u = config.input_count + len(config.constants)
        self.levels = config.depth + 1
        self.weights = [
            np.ones((self.M, self.arg_source_count(p)), dtype=np.float64)
            for p in range(self.levels)
        ]
        self.output_weights = np.ones(
            (config.output_count, self.output_source_count()), dtype=np.float64
        )

    # -- layout ------------------------------------------------------------

    def arg_source_count(self, level: int) -> int:
        """Number of sources visible to level ``level``'s argument rows."""
        if self.config.skip_connections:
            return self.u + level * self.N
        return self.u if level == 0 else self.N

    def output_source_count(self) -> int:
        if self.config.skip_connections:
            return self.u + self.levels * self.N
        return self.N

    def image_rows(self, image_index: int) -> range:
        """Argument-row indices feeding image ``image_index`` (any level)."""
        return range(self.slot_offset[image_index], self.slot_offset[image_index + 1])

    def _global_source(self, s: int):
        if s < self.config.input_count:
            return ("input", s)
        if s < self.u:
            return ("const", s - self.config.input_count)
        q, i = divmod(s - self.u, self.N)
        return ("image", q, i)

    def arg_source(self, level: int, s: int):
        """Resolve source index ``s`` of a level-``level`` argument row."""
        if self.config.skip_connections or level == 0:
            return self._global_source(s)
        return ("image", level - 1, s)

    def output_source(self, s: int):
        if self.config.skip_connections:
            return self._global_source(s)
        return ("image", self.levels - 1, s)

    # -- probabilities -----------------------------------------------------

    def level_probs(self, level: int) -> np.ndarray:
        return softmax_rows(self.weights[level], self.temperature)

    def output_probs(self) -> np.ndarray:
        return softmax_rows(self.output_weights, self.last_layer_temperature)

    def arg_row_probs(self, level: int, row: int) -> np.ndarray:
        return softmax_row(self.weights[level][row], self.temperature)

    def output_row_probs(self, j: int) -> np.ndarray:
        return softmax_row(self.output_weights[j], self.last_layer_temperature)

    # -- parameters ----------------------------------------------------------

    def blocks(self) -> list[np.ndarray]:
        """All trainable weight arrays, in a fixed order."""
        return [*self.weights, self.output_weights]

    def weight_count(self) -> int:
        return int(sum(b.size for b in self.blocks()))

    def clone(self) -> "Network":
        other = Network(self.config)
        other.temperature = self.temperature
        other.last_layer_temperature = self.last_layer_temperature
        for dst, src in zip(other.blocks(), self.blocks()):
            dst[...] = src
        return other


def build_network(
    config: NetworkConfig, registry: Mapping[str, BasisFunction] | None = None
) -> Network:
    """Construct a network with uniform (all-ones) initial weights."""
    return Network(config, registry)


def parameter_count(
    config: NetworkConfig, registry: Mapping[str, BasisFunction] | None = None
) -> int:
    """Closed-form trainable weight count; equals an actual build's total."""
    bases = resolve_bases(config.bases, registry)
    N = len(bases)
    M = sum(b.arity for b in bases)
    u = config.input_count + len(config.constants)
    L = config.depth
    v = config.output_count
    if config.skip_connections:
        return M * sum(u + p * N for p in range(L + 1)) + v * (u + (L + 1) * N)
    return M * (u + N * L) + v * N


# ---------------------------------------------------------------------------
# serialization


def save_network(network: Network, path: str | os.PathLike) -> None:
    """Write a versioned text file: header, config echo, one row per line."""
    lines = [f"{_WEIGHTS_MAGIC} {_WEIGHTS_VERSION}"]
    lines.append(json.dumps(network.config.to_json_dict(), sort_keys=True))
    for block in network.blocks():
        for row in block:
            lines.append(" ".join(repr(float(x)) for x in row))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def load_network(
    path: str | os.PathLike, registry: Mapping[str, BasisFunction] | None = None
) -> Network:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise WeightsFormatError(f"{path}: empty weights file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != _WEIGHTS_MAGIC:
        raise WeightsFormatError(f"{path}: bad magic {lines[0]!r}")
    if int(head[1]) != _WEIGHTS_VERSION:
        raise WeightsFormatError(f"{path}: unsupported version {head[1]}")
    if len(lines) < 2:
        raise WeightsFormatError(f"{path}: missing config header")
    try:
        config = NetworkConfig.from_json_dict(json.loads(lines[1]))
    except (KeyError, ValueError, TypeError) as exc:
        raise WeightsFormatError(f"{path}: bad config header: {exc}") from exc
    network = Network(config, registry)
    rows = lines[2:]
    expected = sum(b.shape[0] for b in network.blocks())
    if len(rows) != expected:
        raise WeightsFormatError(
            f"{path}: expected {expected} weight rows, found {len(rows)}"
        )
    cursor = 0
    for block in network.blocks():
        for r in range(block.shape[0]):
            values = rows[cursor].split()
            cursor += 1
            if len(values) != block.shape[1]:
                raise WeightsFormatError(
                    f"{path}: row {cursor} has {len(values)} entries,"
                    f" expected {block.shape[1]}"
                )
            block[r] = [float(x) for x in values]
    return network
