"""Execution backend: interpreter, reference oracle, C emission, and the
cached operator driver."""

from .codegen import emit_c
from .interpreter import (BackendError, BoundsError, DataBuffer, allocate,
                          reference_run, run)
from .operator import (Operator, OperatorArtifact, autotune, clear_cache,
                       PASS_WORK)

__all__ = [
    "BackendError", "BoundsError", "DataBuffer", "allocate", "emit_c",
    "reference_run", "run", "Operator", "OperatorArtifact", "autotune",
    "clear_cache", "PASS_WORK",
]
