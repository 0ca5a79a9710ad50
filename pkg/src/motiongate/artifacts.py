"""Versioned model container.

An artifact is an ``.npz`` archive holding a JSON header under
``__header__`` and plain numeric arrays; nothing is pickled.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

FORMAT = "motiongate-model"
VERSION = 1
HEADER_KEY = "__header__"


class ArtifactError(ValueError):
    pass


class ArtifactVersionError(ArtifactError):
    pass


def dump_artifact(header: dict, arrays: dict) -> bytes:
    header = {"format": FORMAT, "version": VERSION, **header}
    if HEADER_KEY in arrays:
        raise ArtifactError(f"array name {HEADER_KEY!r} is reserved")
    raw = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **{HEADER_KEY: raw}, **{k: np.asarray(v) for k, v in arrays.items()})
    return buf.getvalue()


def load_artifact_bytes(data: bytes) -> tuple[dict, dict]:
    try:
        with np.load(io.BytesIO(data), allow_pickle=False) as npz:
            if HEADER_KEY not in npz.files:
                raise ArtifactError("missing artifact header")
            header = json.loads(npz[HEADER_KEY].tobytes().decode("utf-8"))
            arrays = {k: npz[k] for k in npz.files if k != HEADER_KEY}
    except (OSError, ValueError) as exc:
        if isinstance(exc, ArtifactError):
            raise
        raise ArtifactError(f"unreadable artifact: {exc}") from None
    if header.get("format") != FORMAT:
        raise ArtifactError(f"not a {FORMAT} artifact")
    version = header.get("version")
    if not isinstance(version, int) or version > VERSION or version < 1:
        raise ArtifactVersionError(f"artifact version {version!r} not supported (this build reads <= {VERSION})")
    return header, arrays


def save_artifact(path, header: dict, arrays: dict) -> None:
    Path(path).write_bytes(dump_artifact(header, arrays))


def load_artifact(path) -> tuple[dict, dict]:
    return load_artifact_bytes(Path(path).read_bytes())
