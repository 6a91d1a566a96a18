"""
Result sinks: where runs write their JSON documents, tables and manifests
"""

import json
import os
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

import pandas as pd

from .exceptions import VicountError


def dumps(payload: Any) -> str:
    """Stable JSON text (sorted keys, fixed indent) so outputs diff byte-for-byte"""
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class ResultSink(ABC):
    """Abstract base class for result destinations"""

    @abstractmethod
    def write_json(self, name: str, payload: Any) -> None:
        """Write a JSON document"""
        pass  # pragma: no cover

    @abstractmethod
    def write_table(self, name: str, frame: pd.DataFrame) -> None:
        """Write a CSV table"""
        pass  # pragma: no cover

    def path_for(self, name: str) -> Optional[str]:
        """Filesystem path of an artifact, when the sink has one"""
        return None

    def flush(self) -> None:
        """Flush pending output"""
        pass


class DirectorySink(ResultSink):
    """Writes every artifact as a file inside one output directory"""

    def __init__(self, out_dir: str):
        self.out_dir = out_dir
        self.written: List[str] = []
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as e:
            raise VicountError(
                f"Cannot create output directory {out_dir}: {e}. "
                f"Choose a writable location with --out.") from e

    def path_for(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def write_json(self, name: str, payload: Any) -> None:
        path = self.path_for(name)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(dumps(payload))
        self.written.append(path)

    def write_table(self, name: str, frame: pd.DataFrame) -> None:
        path = self.path_for(name)
        frame.to_csv(path, index=False, lineterminator="\n")
        self.written.append(path)


class StdoutSink(ResultSink):
    """Prints JSON documents and tables to stdout"""

    def write_json(self, name: str, payload: Any) -> None:
        print(dumps(payload), end="")

    def write_table(self, name: str, frame: pd.DataFrame) -> None:
        print(frame.to_csv(index=False, lineterminator="\n"), end="")


class NullSink(ResultSink):
    """Keeps the last payloads in memory and writes nothing"""

    def __init__(self):
        self.documents: Dict[str, Any] = {}

    def write_json(self, name: str, payload: Any) -> None:
        self.documents[name] = payload

    def write_table(self, name: str, frame: pd.DataFrame) -> None:
        self.documents[name] = frame
