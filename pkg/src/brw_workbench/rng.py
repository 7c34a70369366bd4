# SPDX-FileCopyrightText: 2024-present Alan Meeson <am@carefullycalculated.co.uk>
#
# SPDX-License-Identifier: Apache-2.0
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Tuple, TypeVar, Union

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")

MODULE_IDS = {
    "laws": 1,
    "forward_sim": 2,
    "spine": 3,
    "corridor": 4,
    "tail": 5,
}

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def child_key(key: int, index: int) -> int:
    """
    Derive the 128-bit Philox key of child `index` from its parent's key.

    The mapping only depends on (key, index), so a tree keyed this way is the same tree whatever part of it
    gets visited.
    """
    lo = key & _MASK64
    hi = key >> 64
    lo2 = _splitmix64(lo ^ _splitmix64(index + 1))
    hi2 = _splitmix64(hi ^ lo2)
    return (hi2 << 64) | lo2


@dataclass(frozen=True)
class RngStream:
    """
    A reproducible random stream identified by (master seed, module, path).

    Streams never share state: `child(...)` derives a new stream, and `generator()` always starts the
    same counter-based Philox sequence for the same identity.

    :param seed: master seed, a 64-bit unsigned integer.
    :param module: one of the keys of `MODULE_IDS`.
    :param path: spawn path below the module (replicate index, grid point, ...).
    """

    seed: int
    module: str = "laws"
    path: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= self.seed <= _MASK64:
            err = f"seed must be a 64-bit unsigned integer, got {self.seed}"
            raise ValueError(err)
        if self.module not in MODULE_IDS:
            err = f"Unknown module '{self.module}'. Valid modules are: {list(MODULE_IDS)}"
            raise ValueError(err)

    def child(self, *index: int) -> "RngStream":
        return RngStream(self.seed, self.module, (*self.path, *index))

    def key(self) -> int:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(MODULE_IDS[self.module], *self.path))
        lo, hi = (int(v) for v in seq.generate_state(2, np.uint64))
        return (hi << 64) | lo

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key()))


RandomSource = Union[RngStream, np.random.Generator]


def as_generator(rng: RandomSource) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return rng.generator()


class TreeRng:
    """
    One Philox generator re-keyed for every node of a random tree.

    `at(key)` resets the generator to the start of the sequence owned by `key`; the offspring of a node are
    always drawn from that sequence.
    """

    def __init__(self, stream: RngStream):
        self.root_key = stream.key()
        self._bit_generator = np.random.Philox(key=self.root_key)
        self._generator = np.random.Generator(self._bit_generator)
        self._zeros = np.zeros(4, dtype=np.uint64)

    def at(self, key: int) -> np.random.Generator:
        self._bit_generator.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": self._zeros.copy(),
                "key": np.array([key & _MASK64, key >> 64], dtype=np.uint64),
            },
            "buffer": self._zeros.copy(),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._generator


def run_indexed(task: Callable[[int], T], indices: Iterable[int], threads: int = 1) -> List[T]:
    """
    Run `task` on every index and return the results in index order.

    With `threads > 1` the tasks go to a process pool; `task` must then be picklable (a module level
    function or a `functools.partial` of one). Ordering of the output never depends on scheduling.
    """
    indices = list(indices)
    if threads <= 1 or len(indices) <= 1:
        return [task(i) for i in indices]

    logger.info("Running %d tasks on %d workers", len(indices), threads)
    chunksize = max(1, len(indices) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(task, indices, chunksize=chunksize))
