"""Versioned JSON documents with content checksums."""

import hashlib
import json
from pathlib import Path

from .errors import ArtifactConsistencyError

SCHEMA_VERSION = 1


def canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def checksum(doc) -> str:
    return hashlib.sha256(canonical(doc).encode()).hexdigest()


def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_document(path, kind: str, content: dict) -> str:
    """Write ``content`` wrapped with kind, schema version and checksum."""
    doc = {
        "kind": kind,
        "schema_version": SCHEMA_VERSION,
        "checksum": checksum(content),
        "content": content,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1, allow_nan=False))
    return doc["checksum"]


def read_document(path, kind: str) -> tuple[dict, str]:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != kind:
        raise ArtifactConsistencyError(
            f"{path}: expected a {kind!r} document, found {doc.get('kind')!r}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ArtifactConsistencyError(
            f"{path}: unsupported schema version {doc.get('schema_version')}")
    if checksum(doc["content"]) != doc.get("checksum"):
        raise ArtifactConsistencyError(f"{path}: checksum mismatch")
    return doc["content"], doc["checksum"]
