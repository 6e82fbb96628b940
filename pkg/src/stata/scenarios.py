"""Realistic evaluation tasks.

Batch tasks draw a bounded number of effective classes per batch. Stream
tasks order a whole dataset into a non-i.i.d. sequence by spreading each
class over a fixed number of slots with Dirichlet proportions.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

KEFF_PRESETS = {
    "verylow": (1, 4),
    "low": (2, 10),
    "medium": (5, 25),
    "high": (25, 50),
    "veryhigh": (50, 100),
}
PRESET_NAMES = {"verylow": "VeryLow", "low": "Low", "medium": "Medium",
                "high": "High", "veryhigh": "VeryHigh", "all": "All"}


@dataclass(frozen=True)
class BatchScenario:
    """A named K_eff range; ``keff_range=None`` means all classes."""

    name: str = "Low"
    keff_range: tuple[int, int] | None = (2, 10)
    batch_size: int = 64
    n_tasks: int = 1000
    seed: int = 0

    @classmethod
    def preset(cls, name: str, **kw) -> "BatchScenario":
        key = name.lower().replace("_", "").replace("-", "").replace(" ", "")
        if key == "all":
            return cls(name="All", keff_range=None, **kw)
        if key not in KEFF_PRESETS:
            raise ValueError(f"unknown scenario {name!r}; choose from {sorted(PRESET_NAMES)}")
        return cls(name=PRESET_NAMES[key], keff_range=KEFF_PRESETS[key], **kw)

    def resolve(self, k: int) -> tuple[int, int]:
        """Concrete (lo, hi) for a dataset with ``k`` classes; ``hi`` is capped at ``k``."""
        if self.keff_range is None:
            return k, k
        lo, hi = self.keff_range
        if lo < 1 or lo > hi:
            raise ValueError(f"invalid K_eff range {self.keff_range}")
        if lo > k:
            raise ValueError(f"scenario {self.name} needs at least {lo} classes, dataset has {k}")
        return lo, min(hi, k)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class StreamScenario:
    gamma: float = 0.1
    batch_size: int = 128
    n_tasks: int = 100
    seed: int = 0
    mode: Literal["dirichlet", "separate"] = "dirichlet"

    def __post_init__(self):
        if self.mode not in ("dirichlet", "separate"):
            raise ValueError(f"unknown stream mode {self.mode!r}")
        if self.mode == "dirichlet" and not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Task:
    indices: np.ndarray
    batch_boundaries: list[int]
    effective_classes: list[int]
    scenario: dict = field(default_factory=dict)
    seed: int | None = None

    def batches(self):
        for lo, hi in zip(self.batch_boundaries[:-1], self.batch_boundaries[1:]):
            yield self.indices[lo:hi]

    def to_json(self) -> str:
        doc = {
            "indices": [int(i) for i in self.indices],
            "batch_boundaries": [int(b) for b in self.batch_boundaries],
            "effective_classes": [int(c) for c in self.effective_classes],
            "scenario": self.scenario,
            "seed": self.seed,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Task":
        doc = json.loads(text)
        try:
            indices = np.asarray(doc["indices"], dtype=np.int64)
            bounds = [int(b) for b in doc.get("batch_boundaries") or [0, len(indices)]]
            classes = [int(c) for c in doc.get("effective_classes", [])]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed task file: {exc}") from None
        if bounds[0] != 0 or bounds[-1] != len(indices) or any(b > c for b, c in zip(bounds, bounds[1:])):
            raise ValueError("batch_boundaries must rise from 0 to len(indices)")
        return cls(indices, bounds, classes, doc.get("scenario", {}), doc.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Task":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def _class_pools(labels: np.ndarray, k: int) -> list[np.ndarray]:
    order = np.argsort(labels, kind="stable")
    cuts = np.searchsorted(labels[order], np.arange(k + 1))
    return [order[cuts[c]:cuts[c + 1]] for c in range(k)]


def sample_batch_task(labels, scenario: BatchScenario, rng: np.random.Generator,
                      k: int | None = None) -> Task:
    """Draw one batch with a bounded number of effective classes.

    K_eff is uniform on the scenario range, the classes are a uniform subset,
    and each chosen class contributes one reserved sample before the rest of
    the batch is filled uniformly without replacement from the chosen
    classes' remaining samples. If the chosen classes hold fewer samples than
    ``batch_size``, the batch is all of them, so indices stay unique.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if k is None else k
    pools = _class_pools(labels, k)
    empty = [c for c, p in enumerate(pools) if p.size == 0]
    if empty:
        raise ValueError(f"class {empty[0]} has no samples")
    lo, hi = scenario.resolve(k)
    keff = int(rng.integers(lo, hi + 1))
    if scenario.batch_size < keff:
        raise ValueError(f"batch_size {scenario.batch_size} < K_eff {keff}: cannot include every class")
    classes = np.sort(rng.choice(k, size=keff, replace=False))
    reserved = np.array([rng.choice(pools[c]) for c in classes], dtype=np.int64)
    rest = np.setdiff1d(np.concatenate([pools[c] for c in classes]), reserved)
    fill = min(scenario.batch_size - keff, rest.size)
    extra = rng.choice(rest, size=fill, replace=False)
    indices = rng.permutation(np.concatenate([reserved, extra]))
    return Task(indices, [0, indices.size], classes.tolist(), scenario.to_dict())


def slot_count(k: int, n: int, batch_size: int) -> int:
    return min(k, n // batch_size)


def dirichlet_slots(pools: list[np.ndarray], n_slots: int, gamma: float,
                    rng: np.random.Generator) -> list[np.ndarray]:
    """Split every class pool over ``n_slots`` slots with Dirichlet(gamma) proportions.

    Returns the shuffled contents of each slot, in slot order.
    """
    slots: list[list[np.ndarray]] = [[] for _ in range(n_slots)]
    for pool in pools:
        if pool.size == 0:
            continue
        pool = rng.permutation(pool)
        props = rng.dirichlet(np.full(n_slots, gamma))
        counts = rng.multinomial(pool.size, props)
        for slot, piece in zip(slots, np.split(pool, np.cumsum(counts)[:-1])):
            slot.append(piece)
    return [rng.permutation(np.concatenate(slot)) if slot else np.empty(0, dtype=np.int64) for slot in slots]


def sample_stream_task(labels, scenario: StreamScenario, rng: np.random.Generator,
                       k: int | None = None) -> Task:
    """Order every sample of the dataset into a correlated stream.

    ``dirichlet`` mode spreads each class over ``min(K, N // batch_size)``
    slots with Dirichlet(gamma) proportions, shuffles each slot and
    concatenates them. ``separate`` mode plays the classes one after another
    in random order. The last batch may be short.
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if k is None else k
    n = labels.size
    bs = scenario.batch_size
    if n // bs < 1:
        raise ValueError(f"dataset of {n} samples is smaller than one batch of {bs}")
    pools = _class_pools(labels, k)

    if scenario.mode == "separate":
        parts = [rng.permutation(pools[c]) for c in rng.permutation(k)]
    else:
        parts = dirichlet_slots(pools, slot_count(k, n, bs), scenario.gamma, rng)
    indices = np.concatenate(parts).astype(np.int64)
    bounds = list(range(0, n, bs)) + [n]
    present = np.unique(labels[indices]).tolist()
    return Task(indices, bounds, present, scenario.to_dict())


def generate_tasks(labels, scenario, n_tasks: int | None = None, seed: int | None = None,
                   k: int | None = None) -> list[Task]:
    """Generate ``n_tasks`` tasks; each records the seed that regenerates it alone."""
    n_tasks = scenario.n_tasks if n_tasks is None else n_tasks
    seed = scenario.seed if seed is None else seed
    if n_tasks < 1:
        raise ValueError("empty scenario: n_tasks must be >= 1")
    task_seeds = np.random.SeedSequence(seed).generate_state(n_tasks, dtype=np.uint64)
    sampler = sample_stream_task if isinstance(scenario, StreamScenario) else sample_batch_task
    tasks = []
    for ts in task_seeds:
        task = sampler(labels, scenario, np.random.default_rng(int(ts)), k)
        task.seed = int(ts)
        tasks.append(task)
    return tasks
