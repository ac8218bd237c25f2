"""On-disk corpora.

Each split lives in its own directory::

    header.json   task spec, variant and utterance count
    frames.bin    little-endian f32 frames, row-major, utterances back to back
    frames.idx    one "byte_offset num_frames" line per utterance
    labels.txt    one utterance per line, space-separated tokens
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from codert.config import DataConfig, TaskSpec
from codert.exceptions import StoreError
from codert.logging import get_logger
from codert.models import Corpus, CorpusVariant, Utterance
from codert.stores._atomic import atomic_write, atomic_write_bytes

logger = get_logger(__name__)

HEADER_FILE = "header.json"
FRAMES_FILE = "frames.bin"
INDEX_FILE = "frames.idx"
LABELS_FILE = "labels.txt"
SPEC_FILE = "spec.json"


def _dump_json(data: dict[str, Any]) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


class CorpusStore:
    """A corpus root directory holding one subdirectory per split."""

    def __init__(self, root: Path) -> None:
        self.root = root

    def write_spec(self, config: DataConfig) -> None:
        """Record the resolved generation settings at the corpus root."""
        atomic_write(self.root / SPEC_FILE, _dump_json(config.model_dump(mode="json")))

    def read_spec(self) -> DataConfig:
        path = self.root / SPEC_FILE
        try:
            return DataConfig.model_validate_json(path.read_text())
        except FileNotFoundError as e:
            raise StoreError(f"corpus spec not found: {path}") from e
        except (OSError, ValueError) as e:
            raise StoreError(f"cannot read corpus spec {path}: {e!r}") from e

    def splits(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / HEADER_FILE).exists())

    def write_split(
        self,
        name: str,
        corpus: Corpus,
        spec: TaskSpec,
        variant: CorpusVariant = CorpusVariant.STANDARD,
    ) -> Path:
        """Write one split; returns its directory."""
        split_dir = self.root / name
        header = {
            "task": spec.model_dump(mode="json"),
            "variant": variant.value,
            "num_utterances": len(corpus),
            "feature_dim": corpus.feature_dim,
            "vocab_size": corpus.vocab_size,
        }
        chunks: list[bytes] = []
        index_lines: list[str] = []
        offset = 0
        for utt in corpus.utterances:
            payload = np.ascontiguousarray(utt.frames, dtype="<f4").tobytes()
            index_lines.append(f"{offset} {utt.num_frames}\n")
            chunks.append(payload)
            offset += len(payload)
        atomic_write_bytes(split_dir / FRAMES_FILE, b"".join(chunks))
        atomic_write(split_dir / INDEX_FILE, "".join(index_lines))
        atomic_write(
            split_dir / LABELS_FILE,
            "".join(" ".join(map(str, u.tokens)) + "\n" for u in corpus.utterances),
        )
        atomic_write(split_dir / HEADER_FILE, _dump_json(header))
        logger.debug("Wrote split %s (%d utterances)", split_dir, len(corpus))
        return split_dir

    def read_split(self, name: str) -> Corpus:
        """Load one split.

        Raises:
            StoreError: If the split is missing, malformed or its files disagree.
        """
        split_dir = self.root / name
        if not (split_dir / HEADER_FILE).exists():
            raise StoreError(f"split {name!r} not found under {self.root}")
        try:
            header = json.loads((split_dir / HEADER_FILE).read_text())
            frames = np.fromfile(split_dir / FRAMES_FILE, dtype="<f4")
            index = (split_dir / INDEX_FILE).read_text().splitlines()
            labels = (split_dir / LABELS_FILE).read_text().splitlines()
            dim = int(header["feature_dim"])
            count = int(header["num_utterances"])
            vocab_size = int(header["vocab_size"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise StoreError(f"cannot read split {split_dir}: {e!r}") from e

        if len(index) != count or len(labels) != count:
            raise StoreError(
                f"{split_dir}: header says {count} utterances, "
                f"index has {len(index)}, labels have {len(labels)}"
            )
        utterances: list[Utterance] = []
        for entry, line in zip(index, labels, strict=True):
            try:
                byte_offset, num_frames = (int(v) for v in entry.split())
                tokens = tuple(int(t) for t in line.split())
            except ValueError as e:
                raise StoreError(f"{split_dir}: malformed index or label line: {e}") from e
            start = byte_offset // 4
            stop = start + num_frames * dim
            if stop > frames.size:
                raise StoreError(f"{split_dir}: frame index points past end of {FRAMES_FILE}")
            utterances.append(
                Utterance(
                    frames=frames[start:stop].astype(np.float32).reshape(num_frames, dim),
                    tokens=tokens,
                )
            )
        return Corpus(utterances, dim, vocab_size)

    def read_task(self, name: str) -> TaskSpec:
        path = self.root / name / HEADER_FILE
        try:
            return TaskSpec.model_validate(json.loads(path.read_text())["task"])
        except (OSError, ValueError, KeyError, TypeError) as e:
            raise StoreError(f"cannot read task spec from {path}: {e!r}") from e
