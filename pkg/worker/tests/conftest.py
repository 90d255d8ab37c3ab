from __future__ import annotations

import json
import subprocess
import sys

import pytest


class RawWorker:
    """Raw line-protocol driver: no client-library code between test and worker."""

    def __init__(self, *extra_args: str) -> None:
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "codeworker", *extra_args],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
        )

    def send_line(self, line: str) -> dict:
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()
        reply = self.proc.stdout.readline()
        assert reply.endswith("\n"), "response must be one newline-terminated line"
        return json.loads(reply)

    def request(self, request_id: str, source: str, **fields) -> dict:
        payload = {"id": request_id, "source": source, **fields}
        return self.send_line(json.dumps(payload))

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)


@pytest.fixture
def worker():
    instance = RawWorker()
    yield instance
    instance.close()
