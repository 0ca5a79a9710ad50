"""Shared test utilities that need the package (oracles.py stays independent)."""

from __future__ import annotations

import io
import json

import numpy as np

from motiongate import artifacts


def future_version(data: bytes) -> bytes:
    """Same artifact with its header version bumped past what this build reads."""
    with np.load(io.BytesIO(data)) as z:
        stored = {k: z[k] for k in z.files}
    meta = json.loads(stored[artifacts.HEADER_KEY].tobytes().decode())
    meta["version"] = artifacts.VERSION + 1
    stored[artifacts.HEADER_KEY] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **stored)
    return buf.getvalue()


def http(base, method, path, body=None):
    """``(status, decoded JSON)`` for one request; error statuses are returned, not raised."""
    import urllib.error
    import urllib.request

    data = body if body is None or isinstance(body, bytes) else json.dumps(body).encode()
    req = urllib.request.Request(base + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def score_request(trace, model_id, claimed_id=None, inline=False):
    """JSON body for ``POST /v1/score``."""
    from motiongate.trace import serialize_csv

    if inline:
        payload = {"samples": trace.samples.tolist(), "timestamps_ms": trace.timestamps_ms.tolist()}
    else:
        payload = {"csv": serialize_csv(trace).decode()}
    payload["meta"] = trace.meta()
    body = {"model_id": model_id, "trace": payload}
    if claimed_id is not None:
        body["claimed_id"] = claimed_id
    return body
