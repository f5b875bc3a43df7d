"""Deterministic CSV and manifest persistence.

Every CSV starts with a ``schema`` column whose value names the row
layout and its version (e.g. ``weyl-v1``); readers refuse files whose
schema tag they do not recognize.  Floats are written with 17
significant digits so a parse-and-rewrite round trip is byte-identical.
Files use RFC-4180 conventions (CRLF, minimal quoting).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import subprocess
from pathlib import Path


class SchemaError(ValueError):
    pass


class ChecksumError(ValueError):
    pass


def format_value(v) -> str:
    """Canonical text for a CSV cell; floats at 17 significant digits."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return format(v, ".17g")
    return str(v)


def write_csv(path: Path, schema: str, columns: list[str], rows: list) -> None:
    """Write rows under a schema-tagged header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)  # csv module default: RFC-4180 CRLF endings
        writer.writerow(["schema"] + list(columns))
        for row in rows:
            if len(row) != len(columns):
                raise SchemaError(
                    f"row width {len(row)} != {len(columns)} columns in {path.name}"
                )
            writer.writerow([schema] + [format_value(v) for v in row])


def read_csv(path: Path, expected_schema: str) -> tuple[list[str], list[list[str]]]:
    """Read a schema-tagged CSV, refusing unknown schema versions."""
    path = Path(path)
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path.name} is empty") from None
        if not header or header[0] != "schema":
            raise SchemaError(f"{path.name} lacks the schema column")
        rows = []
        for row in reader:
            if not row:
                continue
            if row[0] != expected_schema:
                raise SchemaError(
                    f"{path.name} carries schema {row[0]!r}; "
                    f"this reader understands {expected_schema!r}"
                )
            rows.append(row[1:])
    return header[1:], rows


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def verify_checksum(path: Path, expected: str) -> None:
    actual = sha256_file(path)
    if actual != expected:
        raise ChecksumError(
            f"{Path(path).name}: checksum {actual[:12]}... does not match "
            f"the manifest ({expected[:12]}...); the file was modified"
        )


def git_describe(cwd: Path | None = None) -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=cwd,
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def write_manifest(path: Path, manifest: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
