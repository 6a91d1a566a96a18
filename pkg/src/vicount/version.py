from __future__ import annotations

from importlib import metadata


def get_version() -> str:
    """
    Return the installed package version.

    Falls back to a safe placeholder when package metadata is unavailable
    (e.g. running from source without installation).
    """
    try:
        return metadata.version("vicount")
    except Exception:
        return "0.0.0"


def _dist_version(name: str) -> str:
    try:
        return metadata.version(name)
    except Exception:
        return "unknown"


def get_package_info() -> dict[str, str]:
    """Versions recorded in every run manifest."""
    return {
        "name": "vicount",
        "version": get_version(),
        "numpy": _dist_version("numpy"),
        "scipy": _dist_version("scipy"),
        "torch": _dist_version("torch"),
        "pandas": _dist_version("pandas"),
    }
