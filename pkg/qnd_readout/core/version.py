# qnd_readout/core/version.py
"""Version of the installed distribution, or of the source checkout it runs from"""

import tomllib
from importlib import metadata
from pathlib import Path

DISTRIBUTION = "qnd-readout"
UNKNOWN_VERSION = "0+unknown"
PYPROJECT = Path(__file__).resolve().parents[2] / "pyproject.toml"


def source_version(pyproject: Path = PYPROJECT) -> str | None:
    """[project].version from a pyproject.toml, None when absent or unreadable"""
    try:
        project = tomllib.loads(pyproject.read_text(encoding="utf-8")).get("project", {})
    except (OSError, tomllib.TOMLDecodeError):
        return None
    version = project.get("version")
    return str(version) if version else None


def get_version() -> str:
    try:
        return metadata.version(DISTRIBUTION)
    except metadata.PackageNotFoundError:
        return source_version() or UNKNOWN_VERSION


__version__ = get_version()
