"""Sandboxed code-execution worker speaking newline-delimited JSON on stdio."""

from .worker import DEFAULT_MAX_OUTPUT_BYTES, STDERR_CAP_BYTES, execute, main

__version__ = "0.1.0"
