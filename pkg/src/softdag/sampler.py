"""Sampling function graphs, scoring them, and running them on data.

A :class:`SampledDAG` pins one incoming edge for every argument row and
every output row.  All rows are sampled, including ones no output can
reach; probabilities and gradients only ever account for the rows
reachable backward from the outputs, so unreachable choices marginalize
out and the induced distribution over reachable configurations sums to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network

__all__ = [
    "SampledDAG",
    "sample",
    "sample_many",
    "log_probability",
    "evaluate",
    "evaluate_recurrent",
    "most_likely_dag",
    "dag_to_text",
    "dag_from_text",
]


@dataclass(frozen=True)
class SampledDAG:
    """One chosen source index per argument row and per output row."""

    choices: tuple[np.ndarray, ...]  # per level, shape (M,), int
    output_choices: np.ndarray  # shape (output_count,), int

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SampledDAG):
            return NotImplemented
        return len(self.choices) == len(other.choices) and all(
            np.array_equal(a, b) for a, b in zip(self.choices, other.choices)
        ) and np.array_equal(self.output_choices, other.output_choices)


def sample_many(network: Network, rng: np.random.Generator, count: int) -> list[SampledDAG]:
    """Draw ``count`` graphs from the network's current distribution.

    Every row's index is drawn from its own categorical; draw order is
    fixed (levels bottom-up, rows in order), so a given generator state
    always produces the same graphs.
    """
    level_choices = []
    for level in range(network.levels):
        probs = network.level_probs(level)
        cum = np.cumsum(probs, axis=1)
        r = rng.random((count, network.M))
        idx = np.empty((count, network.M), dtype=np.int64)
        for m in range(network.M):
            idx[:, m] = np.searchsorted(cum[m], r[:, m], side="right")
        np.clip(idx, 0, probs.shape[1] - 1, out=idx)
        level_choices.append(idx)
    out_probs = network.output_probs()
    cum = np.cumsum(out_probs, axis=1)
    r = rng.random((count, out_probs.shape[0]))
    out_idx = np.empty((count, out_probs.shape[0]), dtype=np.int64)
    for j in range(out_probs.shape[0]):
        out_idx[:, j] = np.searchsorted(cum[j], r[:, j], side="right")
    np.clip(out_idx, 0, out_probs.shape[1] - 1, out=out_idx)
    return [
        SampledDAG(
            choices=tuple(lc[i].copy() for lc in level_choices),
            output_choices=out_idx[i].copy(),
        )
        for i in range(count)
    ]


def sample(network: Network, rng: np.random.Generator) -> SampledDAG:
    """Draw a single graph."""
    return sample_many(network, rng, 1)[0]


def most_likely_dag(network: Network) -> SampledDAG:
    """Per-row argmax graph; ties resolve to the lowest source index."""
    choices = tuple(
        np.argmax(w, axis=1).astype(np.int64) for w in network.weights
    )
    out = np.argmax(network.output_weights, axis=1).astype(np.int64)
    return SampledDAG(choices=choices, output_choices=out)


def _reachable_images(network: Network, dag: SampledDAG, output_indices) -> set:
    """Image nodes reachable backward from the given outputs."""
    images: set[tuple[int, int]] = set()
    stack = []
    for j in output_indices:
        src = network.output_source(int(dag.output_choices[j]))
        if src[0] == "image":
            stack.append((src[1], src[2]))
    while stack:
        q, i = stack.pop()
        if (q, i) in images:
            continue
        images.add((q, i))
        for row in network.image_rows(i):
            src = network.arg_source(q, int(dag.choices[q][row]))
            if src[0] == "image":
                stack.append((src[1], src[2]))
    return images


def log_probability(network: Network, dag: SampledDAG, output_subset=None) -> float:
    """Sum of log edge probabilities over output-reachable rows.

    Each row counts exactly once even when several paths reach it; rows no
    requested output can reach contribute nothing.
    """
    v = network.config.output_count
    if output_subset is None:
        outs = list(range(v))
    else:
        outs = sorted(set(int(j) for j in output_subset))
        if any(j < 0 or j >= v for j in outs):
            raise ValueError("output index out of range")
    total = 0.0
    with np.errstate(divide="ignore"):
        for j in outs:
            p = network.output_row_probs(j)
            total += float(np.log(p[int(dag.output_choices[j])]))
        for q, i in sorted(_reachable_images(network, dag, outs)):
            for row in network.image_rows(i):
                p = network.arg_row_probs(q, row)
                total += float(np.log(p[int(dag.choices[q][row])]))
    return total


def evaluate(network: Network, dag: SampledDAG, X) -> np.ndarray:
    """Run the sampled function on a batch.

    ``X`` has one row per sample and ``input_count`` columns; constants are
    appended internally.  Only the output-reachable subgraph is computed.
    Non-finite intermediates propagate to the affected output entries only.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != network.config.input_count:
        raise ValueError(
            f"expected batch of shape (n, {network.config.input_count}), got {X.shape}"
        )
    n = X.shape[0]
    cfg = network.config
    values: dict[tuple[int, int], np.ndarray] = {}

    def source_value(res):
        if res[0] == "input":
            return X[:, res[1]]
        if res[0] == "const":
            return np.full(n, cfg.constants[res[1]])
        return values[(res[1], res[2])]

    for q, i in sorted(_reachable_images(network, dag, range(cfg.output_count))):
        args = [
            source_value(network.arg_source(q, int(dag.choices[q][row])))
            for row in network.image_rows(i)
        ]
        with np.errstate(all="ignore"):
            values[(q, i)] = np.asarray(network.bases[i].fn(*args), dtype=np.float64)
    out = np.empty((n, cfg.output_count), dtype=np.float64)
    for j in range(cfg.output_count):
        out[:, j] = source_value(network.output_source(int(dag.output_choices[j])))
    return out


def evaluate_recurrent(network: Network, dag: SampledDAG, X, depth: int) -> list[np.ndarray]:
    """Self-compose the sampled function ``depth`` times.

    Element ``d`` (1-based) of the result is the depth-``d`` output batch.
    Requires the output width to equal the input width so outputs can be
    fed back in; a sentinel at depth ``d`` stays a sentinel at all deeper
    depths for that sample.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if network.config.output_count != network.config.input_count:
        raise ValueError("recurrent evaluation needs output_count == input_count")
    outs = []
    cur = np.asarray(X, dtype=np.float64)
    for _ in range(depth):
        cur = evaluate(network, dag, cur)
        outs.append(cur)
    return outs


# ---------------------------------------------------------------------------
# text form: one "(level, row, index)" triple per line, outputs last


def dag_to_text(network: Network, dag: SampledDAG) -> str:
    lines = []
    for level, idx in enumerate(dag.choices):
        for row, choice in enumerate(idx):
            lines.append(f"{level} {row} {int(choice)}")
    out_level = network.levels
    for j, choice in enumerate(dag.output_choices):
        lines.append(f"{out_level} {j} {int(choice)}")
    return "\n".join(lines) + "\n"


def dag_from_text(network: Network, text: str) -> SampledDAG:
    choices = [np.zeros(network.M, dtype=np.int64) for _ in range(network.levels)]
    out = np.zeros(network.config.output_count, dtype=np.int64)
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        level, row, idx = (int(tok) for tok in line.split())
        if level == network.levels:
            if not (0 <= row < network.config.output_count):
                raise ValueError(f"bad output row {row}")
            if not (0 <= idx < network.output_source_count()):
                raise ValueError(f"output choice {idx} out of range")
            out[row] = idx
        else:
            if not (0 <= level < network.levels and 0 <= row < network.M):
                raise ValueError(f"bad row address ({level}, {row})")
            if not (0 <= idx < network.arg_source_count(level)):
                raise ValueError(f"choice {idx} out of range at level {level}")
            choices[level][row] = idx
    return SampledDAG(choices=tuple(choices), output_choices=out)
