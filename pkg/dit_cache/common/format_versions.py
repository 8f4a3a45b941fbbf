"""
File Format Version Management
Reads formats.json and stamps / checks the version of every file dit_cache writes
"""

import json
from pathlib import Path
from typing import Any, Dict, Optional

from .errors import FormatError


class FormatVersionManager:
    """Version table for router files, checkpoints, reports and manifests"""

    def __init__(self, formats_file: Optional[str] = None):
        if formats_file is None:
            formats_file = Path(__file__).parent / "formats.json"
        self._formats: Dict[str, Dict[str, Any]] = {}
        self._load_formats(formats_file)

    def _load_formats(self, filepath):
        """Load the format table from JSON"""
        with open(filepath, 'r', encoding='utf-8') as f:
            data = json.load(f)
        for entry in data.get('formats', []):
            self._formats[entry['name']] = entry

    def current(self, name: str) -> int:
        """Version written by this build for a format"""
        return int(self._entry(name)['version'])

    def check(self, name: str, version: Any, source: str = "") -> int:
        """Raise FormatError unless version is the one this build reads"""
        expected = self.current(name)
        try:
            found = int(version)
        except (TypeError, ValueError):
            found = None
        if found != expected:
            where = f" in {source}" if source else ""
            raise FormatError(f"{name} format version {version!r}{where} is not supported "
                              f"(expected {expected})")
        return found

    def _entry(self, name: str) -> Dict[str, Any]:
        if name not in self._formats:
            raise KeyError(f"unknown file format: {name}")
        return self._formats[name]


# Shared instance
format_versions = FormatVersionManager()
