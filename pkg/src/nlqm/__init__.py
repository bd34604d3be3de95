"""Non-linear quantum mechanics with boundary-dependent propagators."""
from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def bundled(name: str) -> Path:
    """Path of a scenario file shipped with the package, e.g. ``bundled("bell_fig1")``."""
    if not name.endswith(".toml"):
        name += ".toml"
    return Path(str(resources.files(__name__) / "scenarios" / name))
