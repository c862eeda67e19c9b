"""Persistent library of trained panel policies, one entry per focal point.

An entry snapshots every subarray's actor, both critics, and its final
phase image, at float32 precision.  Entries are immutable once stored;
target networks and optimizer state are reconstructed on load.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import as_point
from .nets import SerializationError, load_network, save_network
from .pdi import load_phase_csv, save_phase_csv
from .beams import BeamMatrix, quantize_phases
from .td3 import TD3Policy

LIB_FORMAT = "spotfocus-lib"
LIB_VERSION = 1


@dataclass
class LibraryEntry:
    """Trained policies of every subarray for one focal point."""

    focal_point: np.ndarray
    policies: list[TD3Policy]
    pdis: list[BeamMatrix]
    phase_bits: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.focal_point = as_point(self.focal_point)
        if len(self.policies) != len(self.pdis):
            raise ValueError("one phase image per policy required")
        if not self.policies:
            raise ValueError("entry must hold at least one subarray policy")

    @property
    def num_subarrays(self) -> int:
        return len(self.policies)


def snapshot_entry(focal_point, policies, pdis, phase_bits, metadata=None) -> LibraryEntry:
    """Freeze trained policies into a float32 entry snapshot."""
    frozen = [p.astype(np.float32) for p in policies]
    return LibraryEntry(focal_point, frozen, list(pdis), phase_bits, dict(metadata or {}))


class PolicyLibrary:
    """Ordered collection of LibraryEntry, unique per focal point."""

    def __init__(self, entries=None):
        self.entries: list[LibraryEntry] = []
        for e in entries or []:
            self.add(e)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def add(self, entry: LibraryEntry) -> None:
        for existing in self.entries:
            if np.array_equal(existing.focal_point, entry.focal_point):
                raise ValueError(f"library already holds an entry at {entry.focal_point}")
        self.entries.append(entry)

    def nearest(self, focal_point, count: int) -> list[tuple[LibraryEntry, float]]:
        """Entries sorted by focal-point distance; insertion order breaks
        ties.  Returns at most ``count`` (entry, distance) pairs."""
        fp = as_point(focal_point)
        ranked = sorted(
            ((float(np.linalg.norm(e.focal_point - fp)), i, e) for i, e in enumerate(self.entries)),
            key=lambda t: (t[0], t[1]),
        )
        return [(e, d) for d, _, e in ranked[:count]]

    def save(self, root) -> None:
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        names = []
        for i, entry in enumerate(self.entries):
            name = f"entry_{i:03d}"
            names.append(name)
            save_entry(entry, root / name)
        manifest = {
            "format": f"{LIB_FORMAT}/{LIB_VERSION}",
            "entries": names,
        }
        with open(root / "library.yaml", "w", encoding="ascii") as fh:
            yaml.safe_dump(manifest, fh, sort_keys=False)

    @classmethod
    def load(cls, root) -> "PolicyLibrary":
        root = Path(root)
        manifest_path = root / "library.yaml"
        if not manifest_path.exists():
            raise SerializationError(f"{manifest_path}: no library manifest")
        with open(manifest_path, "r", encoding="ascii") as fh:
            manifest = yaml.safe_load(fh)
        tag = manifest.get("format") if isinstance(manifest, dict) else None
        if tag != f"{LIB_FORMAT}/{LIB_VERSION}":
            raise SerializationError(f"{manifest_path}: unsupported format {tag!r}")
        lib = cls()
        for name in manifest.get("entries", []):
            lib.entries.append(load_entry(root / name))
        return lib


def save_entry(entry: LibraryEntry, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    info = {
        "format": f"{LIB_FORMAT}/{LIB_VERSION}",
        "focal_point_m": [float(v) for v in entry.focal_point],
        "phase_bits": int(entry.phase_bits),
        "subarrays": entry.num_subarrays,
        "metadata": entry.metadata,
    }
    with open(path / "entry.yaml", "w", encoding="ascii") as fh:
        yaml.safe_dump(info, fh, sort_keys=False)
    for m, (policy, pdi) in enumerate(zip(entry.policies, entry.pdis)):
        save_network(policy.actor, path / f"sub_{m:02d}_actor.net")
        save_network(policy.critic1, path / f"sub_{m:02d}_critic1.net")
        save_network(policy.critic2, path / f"sub_{m:02d}_critic2.net")
        save_phase_csv(pdi.phases(), path / f"sub_{m:02d}_pdi.csv")


def load_entry(path) -> LibraryEntry:
    path = Path(path)
    info_path = path / "entry.yaml"
    if not info_path.exists():
        raise SerializationError(f"{info_path}: missing entry manifest")
    with open(info_path, "r", encoding="ascii") as fh:
        info = yaml.safe_load(fh)
    tag = info.get("format") if isinstance(info, dict) else None
    if tag != f"{LIB_FORMAT}/{LIB_VERSION}":
        raise SerializationError(f"{info_path}: unsupported format {tag!r}")
    phase_bits = int(info["phase_bits"])
    policies = []
    pdis = []
    for m in range(int(info["subarrays"])):
        actor = load_network(path / f"sub_{m:02d}_actor.net", dtype=np.float32)
        critic1 = load_network(path / f"sub_{m:02d}_critic1.net", dtype=np.float32)
        critic2 = load_network(path / f"sub_{m:02d}_critic2.net", dtype=np.float32)
        policies.append(TD3Policy(actor, critic1, critic2,
                                  actor.clone(), critic1.clone(), critic2.clone()))
        phases = load_phase_csv(path / f"sub_{m:02d}_pdi.csv")
        pdis.append(BeamMatrix(quantize_phases(phases, phase_bits), phase_bits, subarray=m))
    return LibraryEntry(
        focal_point=info["focal_point_m"],
        policies=policies,
        pdis=pdis,
        phase_bits=phase_bits,
        metadata=info.get("metadata") or {},
    )
