"""
Run directories: atomic output writes and a manifest describing the run.

Every file goes to a temporary sibling first and is moved into place with
os.replace. The manifest is written when the RunDirectory context exits,
with status "ok" or "failed" and the error that ended the run.
"""

import csv
import hashlib
import io
import json
import os
import tempfile
import traceback
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from dit_cache.debug_system import get_debug_logger, LogCategory
from .format_versions import format_versions

# Module-level debug logger
debug_logger = get_debug_logger()

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.ini"


def git_blob_id(data: bytes) -> str:
    """Content id computed the way git hashes a blob"""
    header = f"blob {len(data)}\0".encode("ascii")
    return hashlib.sha1(header + data).hexdigest()


def atomic_write_bytes(path, data: bytes) -> Path:
    """Write data to path through a temp file in the same directory"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buffer.getvalue()


def read_csv(path) -> list:
    """Rows of a CSV file as dicts keyed by the header"""
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class RunDirectory:
    """Output directory of one command; writes the manifest on exit"""

    def __init__(self, path, command: str, seed: int, config_text: str = ""):
        self.root = Path(path)
        self.command = command
        self.seed = int(seed)
        self.config_text = config_text
        self.outputs: Dict[str, Dict[str, Any]] = {}
        self.inputs: Dict[str, List[Dict[str, Any]]] = {}
        self.status = "running"

    def __enter__(self) -> "RunDirectory":
        self.root.mkdir(parents=True, exist_ok=True)
        debug_logger.info(LogCategory.FILE_IO, "Opened run directory", {
            "path": str(self.root), "command": self.command})
        if self.config_text:
            self.write_text(CONFIG_NAME, self.config_text)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.status = "ok" if exc is None else "failed"
        error = None
        if exc is not None:
            error = {
                "type": exc_type.__name__,
                "message": str(exc),
                "traceback": "".join(traceback.format_exception(exc_type, exc, tb)),
            }
        self.write_manifest(error)
        return False

    @staticmethod
    def has_manifest(path) -> bool:
        return (Path(path) / MANIFEST_NAME).is_file()

    def record_inputs(self, **paths):
        """Path and content id of every existing input file, keyed by role; missing files are skipped"""
        for role, value in paths.items():
            values = value if isinstance(value, (list, tuple)) else [value]
            for item in values:
                if item is None or not Path(item).is_file():
                    continue
                data = Path(item).read_bytes()
                self.inputs.setdefault(role, []).append({
                    "path": str(Path(item).resolve()), "blob": git_blob_id(data), "bytes": len(data)})

    def path(self, name: str) -> Path:
        return self.root / name

    def write_bytes(self, name: str, data: bytes) -> Path:
        target = atomic_write_bytes(self.path(name), data)
        self.outputs[name] = {"blob": git_blob_id(data), "bytes": len(data)}
        debug_logger.log_file_operation("write", str(target), details={"bytes": len(data)})
        return target

    def write_text(self, name: str, text: str) -> Path:
        return self.write_bytes(name, text.encode("utf-8"))

    def write_json(self, name: str, obj: Any) -> Path:
        return self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        return self.write_text(name, csv_text(header, rows))

    def write_manifest(self, error: Optional[Dict[str, str]] = None) -> Path:
        from dit_cache import __version__

        manifest = {
            "format_version": format_versions.current("manifest"),
            "status": self.status,
            "command": self.command,
            "seed": self.seed,
            "config_sha256": hashlib.sha256(self.config_text.encode("utf-8")).hexdigest(),
            "config_file": CONFIG_NAME if self.config_text else None,
            "effective_config": self.config_text,
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": dict(sorted(self.outputs.items())),
            "log_file": str(debug_logger.log_file) if debug_logger.log_file else None,
            "package_version": __version__,
            "finished": datetime.now().isoformat(timespec="seconds"),
        }
        if error is not None:
            manifest["error"] = error
        data = (json.dumps(manifest, indent=2) + "\n").encode("utf-8")
        return atomic_write_bytes(self.path(MANIFEST_NAME), data)
