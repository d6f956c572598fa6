"""Shared exception base for the engine.

Every error raised by the library derives from EngineError so callers
(CLI, tests) can separate data/validation failures from genuine bugs.
Concrete error classes live next to the code that raises them.
"""


class EngineError(Exception):
    """Base class for all engine-level validation and data errors."""
