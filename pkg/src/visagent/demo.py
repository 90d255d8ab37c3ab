"""Bundled demo task: fit a linear speed-density traffic model via the code tool.

The task offloads the numeric work to the code interpreter: the snippet
generates noiseless (density, speed) pairs from v = vf * (1 - k / kj) with
vf = 60 and kj = 150, fits the line v = a + b*k by least squares, and
recovers vf = a and kj = -a/b. A scripted reasoning model drives the tool
end-to-end, so the demo runs against either the scripted code backend or
the real sandbox worker.
"""

from __future__ import annotations

import json
import re

from .actions import canonical_call
from .types import BenchmarkItem, Difficulty

FREE_FLOW_SPEED = 60.0
JAM_DENSITY = 150.0

GREENSHIELDS_SOURCE = """\
ks = list(range(10, 150, 10))
vs = [60.0 * (1.0 - k / 150.0) for k in ks]
n = len(ks)
sx = sum(ks)
sy = sum(vs)
sxx = sum(k * k for k in ks)
sxy = sum(k * v for k, v in zip(ks, vs))
b = (n * sxy - sx * sy) / (n * sxx - sx * sx)
a = (sy - b * sx) / n
print(f"vf={a:.9f}")
print(f"kj={-a / b:.9f}")
"""

#: What the snippet prints on a correct fit; frozen from the closed-form
#: least-squares oracle in the test suite.
EXPECTED_PAYLOAD = "vf=60.000000000\nkj=150.000000000\n"

_FIT_RE = re.compile(r"vf=(-?\d+(?:\.\d+)?)\s+kj=(-?\d+(?:\.\d+)?)")


def demo_item() -> BenchmarkItem:
    return BenchmarkItem(
        id="greenshields-demo",
        dataset="demo",
        question=(
            "The scatter plot shows traffic speed v (km/h) against density k "
            "(veh/km). Fit the linear speed-density relation v = vf * (1 - k / kj) "
            "and report the free-flow speed vf."
        ),
        image_ref="demo://speed-density-scatter",
        choices=None,
        gold_answer="60",
        difficulty=Difficulty.MEDIUM,
    )


def demo_tool_args() -> dict:
    return {"source": GREENSHIELDS_SOURCE, "timeout_s": 10}


def demo_model_script() -> list[str]:
    """Scripted reasoning turns: think, offload the fit to the code tool,
    wave the verifier through, answer."""
    tool_line = "TOOL: code " + json.dumps(demo_tool_args())
    return [
        "The plot is linear in k, so I will fit v = a + b*k with least squares "
        "and read vf = a and kj = -a/b.",
        tool_line,
        "CONSISTENT",
        "FINAL ANSWER: vf = 60.000000000 km/h (with kj = 150.000000000 veh/km)",
    ]


def demo_code_call_key() -> str:
    """Canonical scripted-backend key for the demo's code call."""
    return canonical_call("code", demo_tool_args())


def parse_fit(payload: str) -> tuple[float, float]:
    """Extract (vf, kj) from the code tool's output."""
    match = _FIT_RE.search(payload)
    if not match:
        raise ValueError(f"no fit values in payload: {payload[:120]!r}")
    return float(match.group(1)), float(match.group(2))
