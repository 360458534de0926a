"""Bundled scenario files.

Access by name via :func:`uavplan.configs.bundled_path`.
"""

from importlib import resources

BUNDLED = ("crossing_eps01", "crossing_eps001")


def bundled_path(name: str) -> str:
    """Filesystem path of a bundled scenario, e.g. ``crossing_eps01``."""
    if name not in BUNDLED:
        raise KeyError(f"unknown bundled scenario {name!r}, available: {BUNDLED}")
    return str(resources.files(__name__) / f"{name}.yaml")
