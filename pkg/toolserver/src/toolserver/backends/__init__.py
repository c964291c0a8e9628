"""Backend implementations behind the tool endpoints."""


class BackendTimeout(Exception):
    """A backend gave up waiting on whatever it fronts.

    Adapters turn this into a retryable tool_error instead of letting it
    surface as a transport failure.
    """


from . import stubs  # noqa: E402

__all__ = ["BackendTimeout", "stubs"]
