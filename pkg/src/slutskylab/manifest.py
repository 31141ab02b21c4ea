"""Run manifests: resolved parameters, output inventory, replay.

Every experiment writes a manifest.json next to its data files.  The
manifest embeds the fully-resolved config tree, so `replay` can rerun
the chain(s) and reproduce every referenced MC output byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

from . import __version__
from .errors import ConfigError

__all__ = ["RunManifest", "write_manifest", "read_manifest", "replay"]


@dataclass
class RunManifest:
    kind: str                      # simulate | slutsky | ensemble-check | fig* | sweep
    config: dict                   # fully-resolved config tree
    seed: int
    outputs: List[str]             # file names relative to the manifest
    input_hash: str                # sha256 of the canonical config JSON
    version: str = __version__
    schema_version: int = 1
    wall_clock_s: Optional[float] = None
    equilibrated: Optional[bool] = None
    notes: dict = field(default_factory=dict)
    created: str = field(default_factory=lambda: time.strftime("%Y-%m-%dT%H:%M:%S"))


def config_hash(tree: dict) -> str:
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_manifest(path, manifest: RunManifest) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(asdict(manifest), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(path) -> RunManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"manifest not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"manifest is not valid JSON: {exc}") from exc
    known = {f.name for f in RunManifest.__dataclass_fields__.values()}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"manifest has unknown fields: {sorted(unknown)}")
    return RunManifest(**raw)


def replay(manifest_path, out_dir) -> List[Path]:
    """Re-execute the run a manifest describes, writing into `out_dir`.

    Returns the fresh output paths (same file names, new directory); the
    MC data files are byte-identical to the originals.
    """
    from . import experiments

    man = read_manifest(manifest_path)
    if config_hash(man.config) != man.input_hash:
        raise ConfigError("manifest input_hash does not match its config tree")
    return experiments.rerun(man, Path(out_dir))
