"""Test-time adaptation of image/text embedding classifiers with text-anchored class Gaussians."""

__version__ = "0.1.0"

from .embeddings import (  # noqa: E402
    AnchorSet,
    EmbeddingSet,
    FormatError,
    ValidationError,
    load_anchors,
    load_embeddings,
    load_labels,
    read_emb1,
    write_emb1,
)
from .gaussian import AnchorConfig, AnchorDistribution, GaussianBank  # noqa: E402
from .online import StreamState, run_stream, stream_init, stream_step  # noqa: E402
from .scenarios import BatchScenario, StreamScenario, Task, generate_tasks  # noqa: E402
from .solver import SolveResult, SolverConfig, build_affinity, solve  # noqa: E402
from .synthetic import SyntheticSpec, generate_synthetic  # noqa: E402
from .zeroshot import zero_shot_predict  # noqa: E402

__all__ = [
    "AnchorConfig", "AnchorDistribution", "AnchorSet", "BatchScenario", "EmbeddingSet",
    "FormatError", "GaussianBank", "SolveResult", "SolverConfig", "StreamScenario",
    "StreamState", "SyntheticSpec", "Task", "ValidationError", "build_affinity",
    "generate_synthetic", "generate_tasks", "load_anchors", "load_embeddings", "load_labels",
    "read_emb1", "run_stream", "solve", "stream_init", "stream_step", "write_emb1",
    "zero_shot_predict",
]
