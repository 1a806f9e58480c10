"""Host side of the out-of-process detector protocol.

Plugins are child processes speaking newline-delimited JSON over their
standard streams.  The host opens with a hello line, the plugin answers
with a ready line, and from then on exactly one detect request is in
flight per handle.  A plugin reachable through this protocol is
interchangeable with the in-process oracle in every solve loop.

Wire format (one JSON object per line):

    host -> plugin   {"hello": "captcha-grid-lab", "version": 1}
    plugin -> host   {"ready": true, "version": 1}
    host -> plugin   {"id": 1, "image": "<base64 PNG>", "threshold": 0.2}
    plugin -> host   {"id": 1, "detections": [{"label": "bus",
                      "confidence": 0.9, "box": [x0, y0, x1, y1]}]}
"""

from __future__ import annotations

import base64
import json
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .geometry import Detection, clamp_box
from .imaging import encode_png
from .solver import singularize

PROTOCOL_NAME = "captcha-grid-lab"
PROTOCOL_VERSION = 1

HELLO_LINE = json.dumps({"hello": PROTOCOL_NAME, "version": PROTOCOL_VERSION})


class PluginError(RuntimeError):
    """Base class for plugin failures."""


class PluginSpawnError(PluginError):
    """The plugin process could not be started."""


class HandshakeError(PluginError):
    """The plugin did not produce a valid ready line in time."""


class VersionMismatchError(PluginError):
    """The plugin speaks a different protocol version."""


class ProtocolError(PluginError):
    """The plugin sent a malformed or invalid response line."""

    def __init__(self, message: str, line: Optional[str] = None):
        super().__init__(message if line is None else f"{message}: {line!r}")
        self.line = line


class PluginTimeoutError(PluginError):
    """The plugin did not answer within the per-request timeout."""


_EOF = object()


class PluginHandle:
    """One plugin process; at most one request in flight."""

    def __init__(self, proc: subprocess.Popen, version: int):
        self.proc = proc
        self.version = version
        self.state = "ready"
        self._next_id = 0
        self._lines: "queue.Queue" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        try:
            for line in self.proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(_EOF)

    def _read_line(self, timeout: float):
        try:
            return self._lines.get(timeout=timeout)
        except queue.Empty:
            return None

    def close(self) -> None:
        self.state = "dead"
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.wait(timeout=2.0)
        except Exception:
            self.proc.kill()


def _first_line(handle_queue: "queue.Queue", timeout: float):
    try:
        return handle_queue.get(timeout=timeout)
    except queue.Empty:
        return None


def spawn_plugin(command: Union[str, list], handshake_timeout: float = 10.0) -> PluginHandle:
    """Launch a plugin and perform the version handshake."""
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
    except OSError as exc:
        raise PluginSpawnError(f"could not start plugin {argv!r}: {exc}") from exc

    lines: "queue.Queue" = queue.Queue()

    def pump_handshake() -> None:
        line = proc.stdout.readline()
        lines.put(line if line else _EOF)

    t = threading.Thread(target=pump_handshake, daemon=True)
    t.start()

    proc.stdin.write(HELLO_LINE + "\n")
    proc.stdin.flush()

    raw = _first_line(lines, handshake_timeout)
    if raw is None or raw is _EOF:
        proc.kill()
        raise HandshakeError("plugin produced no ready line before the handshake timeout")
    try:
        reply = json.loads(raw)
    except json.JSONDecodeError:
        proc.kill()
        raise HandshakeError(f"plugin sent a non-JSON handshake line: {raw!r}")
    if not isinstance(reply, dict) or reply.get("ready") is not True:
        proc.kill()
        raise HandshakeError(f"plugin handshake line is not a ready message: {raw!r}")
    version = reply.get("version")
    if version != PROTOCOL_VERSION:
        proc.kill()
        raise VersionMismatchError(
            f"plugin speaks protocol version {version!r}, host speaks {PROTOCOL_VERSION}"
        )
    return PluginHandle(proc, int(version))


def detection_to_wire(det: Detection) -> dict:
    return {
        "label": det.label,
        "confidence": det.confidence,
        "box": [det.box.x_min, det.box.y_min, det.box.x_max, det.box.y_max],
    }


def build_detect_request(request_id: int, image: np.ndarray, threshold: float) -> str:
    payload = base64.b64encode(encode_png(image)).decode("ascii")
    return json.dumps({"id": request_id, "image": payload, "threshold": threshold})


def _validate_detections(raw, width: float, height: float, line: str) -> list[Detection]:
    if not isinstance(raw, list):
        raise ProtocolError("detections field must be a list", line)
    out = []
    for entry in raw:
        if not isinstance(entry, dict):
            raise ProtocolError("detection entry must be an object", line)
        try:
            label = str(entry["label"])
            conf = float(entry["confidence"])
            x0, y0, x1, y1 = (float(v) for v in entry["box"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed detection entry ({exc})", line)
        if not 0.0 <= conf <= 1.0:
            raise ProtocolError(f"confidence {conf} outside [0, 1]", line)
        if x0 >= x1 or y0 >= y1:
            raise ProtocolError(f"box has non-positive extent: {[x0, y0, x1, y1]}", line)
        box = clamp_box(x0, y0, x1, y1, width, height)
        if box is None:
            continue
        out.append(Detection(label=singularize(label), confidence=conf, box=box))
    return out


def remote_detect(
    handle: PluginHandle,
    image: np.ndarray,
    threshold: float = 0.2,
    timeout: float = 30.0,
) -> list[Detection]:
    """Send one image to the plugin, validate and return its detections."""
    if handle.state != "ready":
        raise PluginError(f"handle is {handle.state}, not ready")
    handle._next_id += 1
    request_id = handle._next_id
    handle.state = "busy"
    try:
        handle.proc.stdin.write(build_detect_request(request_id, image, threshold) + "\n")
        handle.proc.stdin.flush()
    except (BrokenPipeError, ValueError) as exc:
        handle.state = "dead"
        raise ProtocolError(f"plugin pipe closed while sending: {exc}")

    raw = handle._read_line(timeout)
    if raw is None:
        handle.close()
        raise PluginTimeoutError(f"no response within {timeout}s; handle marked dead")
    if raw is _EOF:
        handle.state = "dead"
        raise ProtocolError("plugin closed its output stream mid-request")

    try:
        reply = json.loads(raw)
    except json.JSONDecodeError:
        handle.state = "dead"
        raise ProtocolError("response line is not valid JSON", raw)
    if not isinstance(reply, dict):
        handle.state = "dead"
        raise ProtocolError("response line is not a JSON object", raw)
    if "error" in reply:
        handle.state = "ready"
        raise ProtocolError(f"plugin reported an error: {reply['error']}", raw)
    if reply.get("id") != request_id:
        handle.state = "dead"
        raise ProtocolError(f"response id {reply.get('id')!r} does not echo request id {request_id}", raw)

    h, w = image.shape[:2]
    detections = _validate_detections(reply.get("detections"), float(w), float(h), raw)
    handle.state = "ready"
    return detections
