"""Loopback detector plugin: replies to every detect request with a fixed
detection list loaded from a JSON file.

Run as ``python -m captcha_grid_lab.loopback_plugin detections.json``.
The file holds a JSON array of wire-format detections.  With no argument
the plugin answers every request with an empty detection list.  Useful
for exercising the host protocol end to end without a real detector.
"""

from __future__ import annotations

import json
import sys


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    canned = []
    if argv:
        with open(argv[0], encoding="utf-8") as fh:
            canned = json.load(fh)

    hello = sys.stdin.readline()
    if not hello:
        return 1
    try:
        greeting = json.loads(hello)
    except json.JSONDecodeError:
        return 1
    if greeting.get("hello") != "captcha-grid-lab":
        return 1
    sys.stdout.write(json.dumps({"ready": True, "version": 1}) + "\n")
    sys.stdout.flush()

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
            request_id = request["id"]
        except (json.JSONDecodeError, KeyError, TypeError):
            sys.stdout.write(json.dumps({"id": None, "error": "malformed request"}) + "\n")
            sys.stdout.flush()
            continue
        sys.stdout.write(json.dumps({"id": request_id, "detections": canned}) + "\n")
        sys.stdout.flush()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
