"""On-disk stores: checkpoints, metrics logs and corpora."""

from codert.stores.checkpoint_store import Checkpoint, load_checkpoint, save_checkpoint
from codert.stores.corpus_store import CorpusStore
from codert.stores.metrics_store import MetricsStore

__all__ = [
    "Checkpoint",
    "CorpusStore",
    "MetricsStore",
    "load_checkpoint",
    "save_checkpoint",
]
