"""Shared helpers: tiny-network builders and independent enumeration oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from softdag import NetworkConfig, SampledDAG, build_network


def make_network(bases, input_count, constants=(), output_count=1, depth=1,
                 temperature=1.0, last_layer_temperature=1.0, skip=True):
    return build_network(
        NetworkConfig(
            bases=tuple(bases),
            input_count=input_count,
            constants=tuple(constants),
            output_count=output_count,
            depth=depth,
            temperature=temperature,
            last_layer_temperature=last_layer_temperature,
            skip_connections=skip,
        )
    )


def make_dag(network, level_choices, output_choices):
    """Build a SampledDAG from plain lists; unspecified rows default to 0."""
    choices = []
    for level in range(network.levels):
        arr = np.zeros(network.M, dtype=np.int64)
        if level < len(level_choices) and level_choices[level] is not None:
            given = level_choices[level]
            arr[: len(given)] = given
        choices.append(arr)
    return SampledDAG(
        choices=tuple(choices),
        output_choices=np.asarray(output_choices, dtype=np.int64),
    )


def fig1_network():
    """Two-input network with constants (1, pi) over ADD, SIN, SQUARE, MUL."""
    return make_network(
        ("ADD", "SIN", "SQUARE", "MUL"),
        input_count=2,
        constants=(1.0, math.pi),
        output_count=2,
        depth=2,
    )


def fig1b_dag(network):
    """The sampled graph computing (sin(x0 + 1))^2 and sin(pi^2 sin(x1)).

    Slot layout per level: ADD -> rows 0-1, SIN -> 2, SQUARE -> 3,
    MUL -> rows 4-5.  Source indices: x0=0, x1=1, const 1=2, pi=3, then
    images level-major (4 per level).
    """
    lvl0 = [0, 2, 1, 3, 0, 0]  # ADD(x0, 1), SIN(x1), SQUARE(pi)
    lvl1 = [0, 0, 4, 0, 6, 5]  # SIN(ADD@0), MUL(SQUARE@0, SIN@0)
    lvl2 = [0, 0, 11, 9, 0, 0]  # SIN(MUL@1), SQUARE(SIN@1)
    return make_dag(network, [lvl0, lvl1, lvl2], [14, 13])


# ---------------------------------------------------------------------------
# independent probability oracle: exhaustive enumeration over reachable rows


def _softmax(w, t):
    z = np.asarray(w, dtype=np.float64) / t
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def class_count_bound(network) -> int:
    """Upper bound on distinct reachable-row assignments."""
    memo: dict[tuple[int, int], int] = {}

    def image_classes(q, i):
        if (q, i) in memo:
            return memo[(q, i)]
        total = 1
        for _row in network.image_rows(i):
            per_source = 0
            for s in range(network.arg_source_count(q)):
                res = network.arg_source(q, s)
                per_source += image_classes(res[1], res[2]) if res[0] == "image" else 1
            total *= per_source
        memo[(q, i)] = total
        return total

    bound = 1
    for _j in range(network.config.output_count):
        per_source = 0
        for s in range(network.output_source_count()):
            res = network.output_source(s)
            per_source += image_classes(res[1], res[2]) if res[0] == "image" else 1
        bound *= per_source
    return bound


def enumerate_classes(network):
    """All distinct reachable-choice assignments with oracle probabilities.

    Recursively branches over choices of rows as they become reachable;
    rows never reached are marginalized out.  Returns a list of
    (probability, assignment) where assignment maps ('out', j) and
    ('arg', level, row) to the chosen source index.
    """
    cfg = network.config
    out_probs = [
        _softmax(network.output_weights[j], cfg.last_layer_temperature)
        for j in range(cfg.output_count)
    ]
    results = []

    def rec(pending, assignment, visited, prob):
        if not pending:
            results.append((prob, dict(assignment)))
            return
        key = pending[0]
        rest = pending[1:]
        if key[0] == "out":
            probs = out_probs[key[1]]
            resolve = network.output_source
        else:
            _, level, row = key
            probs = _softmax(network.weights[level][row], cfg.temperature)
            resolve = lambda s: network.arg_source(level, s)  # noqa: E731
        for s, p in enumerate(probs):
            res = resolve(s)
            new_pending = rest
            new_visited = visited
            if res[0] == "image":
                q, i = res[1], res[2]
                if (q, i) not in visited:
                    new_visited = visited | {(q, i)}
                    new_pending = rest + [("arg", q, r) for r in network.image_rows(i)]
            assignment[key] = s
            rec(new_pending, assignment, new_visited, prob * p)
            del assignment[key]

    rec([("out", j) for j in range(cfg.output_count)], {}, frozenset(), 1.0)
    return results


def dag_from_assignment(network, assignment) -> SampledDAG:
    choices = [np.zeros(network.M, dtype=np.int64) for _ in range(network.levels)]
    out = np.zeros(network.config.output_count, dtype=np.int64)
    for key, s in assignment.items():
        if key[0] == "out":
            out[key[1]] = s
        else:
            choices[key[1]][key[2]] = s
    return SampledDAG(choices=tuple(choices), output_choices=out)


_TINY_POOL = ["SIN", "NEG", "SQUARE", "ID", "TANH", "ADD", "MUL"]


def random_tiny_network(rng, max_classes=200_000, skip=None):
    """A random small network whose class enumeration stays tractable."""
    for _ in range(200):
        n_bases = int(rng.integers(1, 4))
        bases = tuple(str(rng.choice(_TINY_POOL)) for _ in range(n_bases))
        net = make_network(
            bases,
            input_count=int(rng.integers(1, 4)),
            constants=tuple(float(c) for c in rng.uniform(0.5, 2.0, int(rng.integers(0, 2)))),
            output_count=int(rng.integers(1, 3)),
            depth=int(rng.integers(1, 3)),
            temperature=float(rng.uniform(0.5, 2.0)),
            last_layer_temperature=float(rng.uniform(0.5, 2.0)),
            skip=bool(rng.integers(0, 2)) if skip is None else skip,
        )
        for block in net.blocks():
            block += rng.normal(0.0, 0.7, size=block.shape)
        if class_count_bound(net) <= max_classes:
            return net
    raise AssertionError("could not draw a tractable tiny network")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
