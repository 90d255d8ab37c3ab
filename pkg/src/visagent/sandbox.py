"""Client for the line-delimited code-execution worker.

The worker is a separate child process speaking newline-delimited JSON over
stdin/stdout: one request line produces exactly one response line, ids are
echoed. Request: ``{"id","source","timeout_s","memory_mb"}``. Response:
``{"id","status","stdout","stderr","duration_ms"}`` with status one of
``ok | timeout | memory_exceeded | runtime_error``. Any framing violation
(missing, unparseable, or mismatched response) restarts the worker and
yields a ``runtime_error`` result to the caller.

One client owns one worker connection and must be used serially.
"""

from __future__ import annotations

import json
import logging
import os
import selectors
import subprocess
import time
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

logger = logging.getLogger(__name__)

#: Extra wall time allowed for the worker's own reply beyond the code timeout.
_REPLY_GRACE_S = 10.0


class SandboxStatus(str, Enum):
    OK = "ok"
    TIMEOUT = "timeout"
    MEMORY_EXCEEDED = "memory_exceeded"
    RUNTIME_ERROR = "runtime_error"


@dataclass(frozen=True)
class ExecResult:
    status: SandboxStatus
    stdout: str
    stderr: str
    duration_ms: int


class SandboxWorkerClient:
    """Spawns and talks to one worker child process."""

    def __init__(self, cmd: Sequence[str], *, max_output_bytes: int = 65536) -> None:
        self._base_cmd = list(cmd)
        self._max_output_bytes = max_output_bytes
        self._proc: subprocess.Popen | None = None
        self._buffer = b""
        self._counter = 0

    def execute(self, source: str, timeout_s: float = 10.0, memory_mb: int = 512) -> ExecResult:
        self._counter += 1
        request_id = f"r{self._counter}"
        request = json.dumps(
            {"id": request_id, "source": source, "timeout_s": timeout_s, "memory_mb": memory_mb}
        )
        proc = self._ensure_proc()
        try:
            proc.stdin.write(request.encode("utf-8") + b"\n")
            proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            return self._desync(f"worker pipe closed: {exc}")
        line = self._read_line(proc, deadline_s=timeout_s + _REPLY_GRACE_S)
        if line is None:
            return self._desync("no response line before deadline")
        try:
            body = json.loads(line)
            status = SandboxStatus(body["status"])
            response_id = body["id"]
        except (ValueError, KeyError, TypeError) as exc:
            return self._desync(f"unparseable response: {exc}")
        if response_id != request_id:
            return self._desync(f"response id {response_id!r} != request id {request_id!r}")
        return ExecResult(
            status=status,
            stdout=str(body.get("stdout", "")),
            stderr=str(body.get("stderr", "")),
            duration_ms=int(body.get("duration_ms", 0)),
        )

    def _desync(self, reason: str) -> ExecResult:
        logger.warning("sandbox worker protocol desync: %s; restarting worker", reason)
        self._restart()
        return ExecResult(SandboxStatus.RUNTIME_ERROR, "", f"worker protocol desync: {reason}", 0)

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            cmd = self._base_cmd + ["--max-output-bytes", str(self._max_output_bytes)]
            self._proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
            self._buffer = b""
        return self._proc

    def _read_line(self, proc: subprocess.Popen, deadline_s: float) -> bytes | None:
        deadline = time.monotonic() + deadline_s
        selector = selectors.DefaultSelector()
        selector.register(proc.stdout, selectors.EVENT_READ)
        try:
            while b"\n" not in self._buffer:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not selector.select(timeout=remaining):
                    return None
                chunk = os.read(proc.stdout.fileno(), 65536)
                if not chunk:
                    return None
                self._buffer += chunk
        finally:
            selector.close()
        line, _, self._buffer = self._buffer.partition(b"\n")
        return line

    def _restart(self) -> None:
        self.close()

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except OSError:
                pass
            self._proc = None
        self._buffer = b""

    def describe(self) -> dict:
        return {"kind": "worker", "cmd": list(self._base_cmd)}

    def __enter__(self) -> "SandboxWorkerClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
