# app/utils/files.py
import json
import os
import tempfile
from typing import Any, List, Union

from app.core.errors import OutputError

Payload = Union[str, bytes]


def ensure_output_dir(path: str) -> str:
    """
    Create the output directory if needed and check it accepts writes.
    Raises OutputError before any experiment work starts.
    """
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create output directory {path}: {e}")
    if not os.access(path, os.W_OK | os.X_OK):
        raise OutputError(f"output directory {path} is not writable")
    return path


def write_atomic(path: str, payload: Payload) -> str:
    """Write to a temp file in the same folder, then rename over the target."""
    folder = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(payload, bytes) else "w"
    try:
        fd, tmp = tempfile.mkstemp(dir=folder, prefix=".tmp-", suffix=os.path.basename(path))
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as out_file:
            out_file.write(payload)
        os.replace(tmp, path)
    except OSError as e:
        raise OutputError(f"failed to write {path}: {e}")
    return path


class OutputSet:
    """
    Tracks the files one command writes so a failure can remove the partial set.
    """

    def __init__(self, root: str):
        self.root = ensure_output_dir(root)
        self.written: List[str] = []

    def path(self, name: str) -> str:
        return os.path.join(self.root, name)

    def write(self, name: str, payload: Payload) -> str:
        path = write_atomic(self.path(name), payload)
        if path not in self.written:
            self.written.append(path)
        return path

    def write_json(self, name: str, data: Any) -> str:
        return self.write(name, json.dumps(data, indent=2, sort_keys=False) + "\n")

    def discard(self) -> None:
        for path in self.written:
            try:
                os.remove(path)
            except OSError:
                pass
        self.written.clear()
