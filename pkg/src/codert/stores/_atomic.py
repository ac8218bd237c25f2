"""Atomic writes and advisory locks for run artifacts."""

from __future__ import annotations

import sys
from collections.abc import Iterator
from contextlib import contextmanager, suppress
from pathlib import Path

if sys.platform == "win32":
    import msvcrt

    @contextmanager
    def file_lock(path: Path, shared: bool = False) -> Iterator[None]:
        """Lock ``path`` (created if missing) for the duration of the block."""
        path.parent.mkdir(parents=True, exist_ok=True)
        path.touch(exist_ok=True)
        mode = msvcrt.LK_NBRLCK if shared else msvcrt.LK_NBLCK
        with path.open("r+b") as f:
            try:
                msvcrt.locking(f.fileno(), mode, 1)
                yield
            finally:
                with suppress(OSError):
                    msvcrt.locking(f.fileno(), msvcrt.LK_UNLCK, 1)

else:
    import fcntl

    @contextmanager
    def file_lock(path: Path, shared: bool = False) -> Iterator[None]:
        """Lock ``path`` (created if missing) for the duration of the block."""
        path.parent.mkdir(parents=True, exist_ok=True)
        path.touch(exist_ok=True)
        with path.open("r+b") as f:
            try:
                fcntl.flock(f.fileno(), fcntl.LOCK_SH if shared else fcntl.LOCK_EX)
                yield
            finally:
                fcntl.flock(f.fileno(), fcntl.LOCK_UN)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write ``data`` via a sibling temp file and rename.

    Readers see either the old file or the complete new one.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(path.suffix + ".tmp")
    try:
        temp_path.write_bytes(data)
        temp_path.replace(path)
    except Exception:
        temp_path.unlink(missing_ok=True)
        raise


def atomic_write(path: Path, content: str) -> None:
    """Text variant of :func:`atomic_write_bytes` (UTF-8)."""
    atomic_write_bytes(path, content.encode("utf-8"))
