"""Execute submitted Python snippets under time and memory limits.

Protocol, one line each way per request:

    request  {"id": str, "source": str, "timeout_s": num, "memory_mb": int}
    response {"id": str, "status": str, "stdout": str, "stderr": str,
              "duration_ms": int}

``status`` is one of ``ok``, ``timeout``, ``memory_exceeded``,
``runtime_error``; ``ok`` means the snippet exited cleanly (stderr may
still carry text). Ids are always echoed; a request line that cannot be
parsed is answered with ``runtime_error`` and an empty id.

Each request runs in a fresh interpreter subprocess, so nothing leaks
between requests. Limits are process-level (rlimits plus a kill on
timeout): adequate isolation for trusted benchmark code, NOT a security
boundary for hostile input. Network access from snippets is disabled
best-effort by stubbing out socket creation.
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
import tempfile
import time

DEFAULT_MAX_OUTPUT_BYTES = 65536
STDERR_CAP_BYTES = 16384

DEFAULT_TIMEOUT_S = 10.0
DEFAULT_MEMORY_MB = 512

#: Exit code the child uses to signal it died of MemoryError.
_MEMORY_EXIT = 40

# Runs under ``python -I -c`` with argv[1] = memory_mb; reads the snippet
# from stdin and executes it in a fresh namespace.
_CHILD_RUNNER = """\
import sys

def _main():
    import os, resource, socket, traceback

    limit = int(sys.argv[1]) * 1024 * 1024
    try:
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except (ValueError, OSError):
        pass

    def _blocked(*args, **kwargs):
        raise OSError("network access is disabled in the sandbox")

    socket.socket = _blocked

    source = sys.stdin.read()
    sys.stdin = open(os.devnull)
    namespace = {"__name__": "__main__"}
    try:
        exec(compile(source, "<request>", "exec"), namespace)
    except MemoryError:
        sys.exit(40)
    except SystemExit:
        raise
    except BaseException:
        traceback.print_exc()
        sys.exit(1)

_main()
"""


def execute(
    source: str,
    timeout_s: float = DEFAULT_TIMEOUT_S,
    memory_mb: int = DEFAULT_MEMORY_MB,
    max_output_bytes: int = DEFAULT_MAX_OUTPUT_BYTES,
) -> dict:
    """Run one snippet in a fresh subprocess; returns the response fields
    except the echoed id."""
    started = time.monotonic()
    with tempfile.TemporaryFile() as out_file, tempfile.TemporaryFile() as err_file:
        child = subprocess.Popen(
            [sys.executable, "-I", "-c", _CHILD_RUNNER, str(memory_mb)],
            stdin=subprocess.PIPE,
            stdout=out_file,
            stderr=err_file,
        )
        try:
            child.communicate(source.encode("utf-8"), timeout=timeout_s)
            timed_out = False
        except subprocess.TimeoutExpired:
            child.kill()
            child.wait()
            timed_out = True
        duration_ms = int((time.monotonic() - started) * 1000)
        out_file.seek(0)
        stdout = out_file.read(max_output_bytes).decode("utf-8", errors="replace")
        err_file.seek(0)
        stderr = err_file.read(STDERR_CAP_BYTES).decode("utf-8", errors="replace")
    if timed_out:
        status = "timeout"
    elif child.returncode == 0:
        status = "ok"
    elif child.returncode == _MEMORY_EXIT:
        status = "memory_exceeded"
    else:
        status = "runtime_error"
    return {"status": status, "stdout": stdout, "stderr": stderr, "duration_ms": duration_ms}


def handle_line(line: str, max_output_bytes: int) -> dict:
    try:
        request = json.loads(line)
        if not isinstance(request, dict):
            raise ValueError("request must be a JSON object")
    except ValueError as exc:
        return _refusal("", f"malformed request: {exc}")
    request_id = str(request.get("id", ""))
    source = request.get("source")
    if not isinstance(source, str) or not source:
        return _refusal(request_id, "source must be a non-empty string")
    try:
        timeout_s = float(request.get("timeout_s", DEFAULT_TIMEOUT_S))
        memory_mb = int(request.get("memory_mb", DEFAULT_MEMORY_MB))
    except (TypeError, ValueError) as exc:
        return _refusal(request_id, f"bad limit field: {exc}")
    if timeout_s <= 0:
        return _refusal(request_id, "timeout_s must be > 0")
    if memory_mb <= 0:
        return _refusal(request_id, "memory_mb must be > 0")
    response = execute(source, timeout_s, memory_mb, max_output_bytes)
    response["id"] = request_id
    return response


def _refusal(request_id: str, reason: str) -> dict:
    return {
        "id": request_id,
        "status": "runtime_error",
        "stdout": "",
        "stderr": reason,
        "duration_ms": 0,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="codeworker", description=__doc__)
    parser.add_argument(
        "--max-output-bytes",
        type=int,
        default=DEFAULT_MAX_OUTPUT_BYTES,
        help="cap on captured stdout per request",
    )
    args = parser.parse_args(argv)
    while True:
        line = sys.stdin.readline()
        if not line:
            return 0
        if not line.strip():
            continue
        response = handle_line(line, args.max_output_bytes)
        try:
            sys.stdout.write(json.dumps(response) + "\n")
            sys.stdout.flush()
        except BrokenPipeError:
            return 0


if __name__ == "__main__":
    sys.exit(main())
