"""Content-hash manifests: stage resumability and no-op re-runs.

A stage's manifest records the sha256 of every input, a parameter
snapshot, and the sha256 of every output. Re-running with unchanged
inputs, parameters, and intact outputs is a no-op; touching any of them
invalidates the stage. Manifests carry no timestamps or absolute paths,
so identical runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def file_sha256(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_map(files: dict[str, Path]) -> dict[str, str]:
    return {name: file_sha256(path) for name, path in sorted(files.items())}


def manifest_path(workdir: Path, stage: str) -> Path:
    return workdir / "manifests" / f"{stage}.json"


def stage_is_current(
    workdir: Path, stage: str, inputs: dict[str, Path], params: dict
) -> bool:
    """True when the stage's manifest matches its inputs/params and every
    recorded output is present with its recorded hash."""
    path = manifest_path(workdir, stage)
    if not path.exists():
        return False
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if manifest.get("stage") != stage or manifest.get("params") != params:
        return False
    for name, path_ in inputs.items():
        if not Path(path_).exists():
            return False
    if manifest.get("inputs") != _hash_map(inputs):
        return False
    for name, recorded in manifest.get("outputs", {}).items():
        out_path = workdir / name
        if not out_path.exists() or file_sha256(out_path) != recorded:
            return False
    return True


def write_manifest(
    workdir: Path,
    stage: str,
    inputs: dict[str, Path],
    params: dict,
    outputs: dict[str, Path],
) -> None:
    path = manifest_path(workdir, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "stage": stage,
        "params": params,
        "inputs": _hash_map(inputs),
        "outputs": _hash_map(outputs),
    }
    path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
