"""Tests for on-disk corpora."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from codert.config import DataConfig, TaskSpec
from codert.exceptions import StoreError
from codert.models import Corpus, CorpusVariant
from codert.stores.corpus_store import CorpusStore


def test_write_and_read_split(tmp_path: Path, tiny_task: TaskSpec, tiny_corpus: Corpus):
    """Test frames and tokens survive a write and read."""
    store = CorpusStore(tmp_path / "corpus")
    split_dir = store.write_split("train", tiny_corpus, tiny_task)

    loaded = store.read_split("train")

    assert (split_dir / "frames.bin").exists()
    assert len(loaded) == len(tiny_corpus)
    assert loaded.feature_dim == tiny_task.feature_dim
    for a, b in zip(loaded.utterances, tiny_corpus.utterances, strict=True):
        assert a.tokens == b.tokens
        assert np.array_equal(a.frames, b.frames)


def test_file_formats(tmp_path: Path, tiny_task: TaskSpec, tiny_corpus: Corpus):
    """Test header, labels, index and frame file sizes on disk."""
    store = CorpusStore(tmp_path)
    split_dir = store.write_split("long", tiny_corpus, tiny_task, CorpusVariant.LONG)

    header = json.loads((split_dir / "header.json").read_text())
    labels = (split_dir / "labels.txt").read_text().splitlines()
    index = (split_dir / "frames.idx").read_text().splitlines()

    assert header["variant"] == "long"
    assert header["num_utterances"] == len(tiny_corpus)
    assert labels[0] == " ".join(map(str, tiny_corpus.utterances[0].tokens))
    assert index[0] == f"0 {tiny_corpus.utterances[0].num_frames}"
    total = sum(u.num_frames for u in tiny_corpus.utterances) * tiny_task.feature_dim * 4
    assert (split_dir / "frames.bin").stat().st_size == total
    assert store.read_task("long") == tiny_task


def test_empty_split(tmp_path: Path, tiny_task: TaskSpec):
    """Test a split with no utterances round-trips."""
    store = CorpusStore(tmp_path)
    store.write_split("test", Corpus([], tiny_task.feature_dim, tiny_task.vocab_size), tiny_task)
    assert len(store.read_split("test")) == 0


def test_splits_listing(tmp_path: Path, tiny_task: TaskSpec, tiny_corpus: Corpus):
    """Test only directories with a header count as splits."""
    store = CorpusStore(tmp_path)
    assert store.splits() == []
    store.write_split("train", tiny_corpus, tiny_task)
    store.write_split("dev", tiny_corpus.subset([0]), tiny_task)
    assert store.splits() == ["dev", "train"]


def test_spec_round_trip(tmp_path: Path, tiny_task: TaskSpec):
    """Test the generation settings are recorded at the corpus root."""
    store = CorpusStore(tmp_path)
    config = DataConfig(task=tiny_task, num_utterances=5)
    store.write_spec(config)
    assert store.read_spec() == config


def test_missing_split(tmp_path: Path):
    """Test reading an absent split raises StoreError."""
    with pytest.raises(StoreError, match="not found"):
        CorpusStore(tmp_path).read_split("test")


def test_inconsistent_files(tmp_path: Path, tiny_task: TaskSpec, tiny_corpus: Corpus):
    """Test a label file shorter than the header count is rejected."""
    store = CorpusStore(tmp_path)
    split_dir = store.write_split("train", tiny_corpus, tiny_task)
    labels = (split_dir / "labels.txt").read_text().splitlines()
    (split_dir / "labels.txt").write_text("\n".join(labels[:-1]) + "\n")
    with pytest.raises(StoreError, match="utterances"):
        store.read_split("train")


def test_header_missing_field(tmp_path: Path, tiny_task: TaskSpec, tiny_corpus: Corpus):
    """Test a header without a required field raises StoreError."""
    store = CorpusStore(tmp_path)
    split_dir = store.write_split("train", tiny_corpus, tiny_task)
    header = json.loads((split_dir / "header.json").read_text())
    del header["feature_dim"]
    (split_dir / "header.json").write_text(json.dumps(header))
    with pytest.raises(StoreError, match="cannot read split"):
        store.read_split("train")


def test_malformed_index_line(tmp_path: Path, tiny_task: TaskSpec, tiny_corpus: Corpus):
    """Test a non-numeric frame index entry raises StoreError."""
    store = CorpusStore(tmp_path)
    split_dir = store.write_split("train", tiny_corpus, tiny_task)
    index = (split_dir / "frames.idx").read_text().splitlines()
    index[0] = "zero frames"
    (split_dir / "frames.idx").write_text("\n".join(index) + "\n")
    with pytest.raises(StoreError, match="malformed"):
        store.read_split("train")


def test_corrupt_task_header(tmp_path: Path, tiny_task: TaskSpec, tiny_corpus: Corpus):
    """Test read_task wraps undecodable and incomplete headers in StoreError."""
    store = CorpusStore(tmp_path)
    split_dir = store.write_split("train", tiny_corpus, tiny_task)
    (split_dir / "header.json").write_bytes(b"\xff\xfe{")
    with pytest.raises(StoreError, match="cannot read task spec"):
        store.read_task("train")
    (split_dir / "header.json").write_text("{}")
    with pytest.raises(StoreError, match="cannot read task spec"):
        store.read_task("train")
