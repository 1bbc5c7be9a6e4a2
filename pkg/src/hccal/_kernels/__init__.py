"""Batch-scoring backends: compiled kernel with a pure-numpy fallback.

The compiled extension is preferred when it built; ``HCCAL_BACKEND`` forces
``compiled`` or ``python`` explicitly. Both expose ``batch_scores`` with the
same contract and agree to well below 1e-12.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import python_ref

try:
    from . import _fastcal
except ImportError:  # extension not built; numpy fallback only
    _fastcal = None


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _fastcal is not None else ("python",)


def get_backend(name: str | None = None):
    """Resolve a backend module by name, env var, or availability."""
    if name is None:
        name = os.environ.get("HCCAL_BACKEND", "auto")
    if name == "auto":
        return _fastcal if _fastcal is not None else python_ref
    if name == "python":
        return python_ref
    if name == "compiled":
        if _fastcal is None:
            raise ConfigError("compiled backend requested but the extension is not built")
        return _fastcal
    raise ConfigError(f"unknown backend {name!r}; expected auto, compiled or python")
