"""Content digests for reproducibility manifests.

Digests are SHA-256 over canonical JSON (sorted keys, compact separators)
for configs and over raw bytes for files. No timestamps or host details
are ever included: two runs with the same inputs and config must produce
byte-identical provenance.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def config_digest(config) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
