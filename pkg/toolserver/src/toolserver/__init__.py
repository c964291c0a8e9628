"""HTTP tool server speaking the reasoning engine's wire protocol.

The server binds each of the six tool kinds to a backend and answers
POST requests at /v1/<kind>. The bundled backends are deterministic and
fully offline, so the process is usable in CI and as a protocol
reference without any credentials or network access.
"""

from .app import create_app
from .bindings import AdapterBinding, BindingError, default_bindings, load_bindings

__all__ = [
    "AdapterBinding",
    "BindingError",
    "create_app",
    "default_bindings",
    "load_bindings",
]
