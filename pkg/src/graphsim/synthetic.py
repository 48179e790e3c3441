"""Planted-community synthetic cohorts with two structurally distinct classes.

Each subject's affinity matrix is a community block model plus symmetric
gaussian noise, clipped to [0, 1] with a unit diagonal. Class A uses equal
contiguous communities; class B differs either by merging the first two
communities (block_merge) or by rotating the community assignment across
nodes (partition_shift). Within-class variation comes only from noise, so
class separation is controlled by (w_in - w_out) against noise_sd.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ValidationError
from .graphs import AffinityMatrix, read_affinity_csv, write_affinity_csv
from .training import Cohort, Subject

_NS_SUBJECT = 401

CLASS_STRUCTURES = ("block_merge", "partition_shift")


@dataclass(frozen=True)
class SynthSpec:
    """Cohort shape and noise parameters."""

    n_nodes: int = 90
    n_communities: int = 4
    w_in: float = 0.6
    w_out: float = 0.2
    noise_sd: float = 0.1
    subjects_per_class: int = 40
    class_structure: str = "block_merge"
    seed: int = 0

    def __post_init__(self):
        if self.n_communities < 2:
            raise ValidationError(f"n_communities must be >= 2, got {self.n_communities}")
        if self.n_nodes < 2 * self.n_communities:
            raise ValidationError(
                f"n_nodes must be at least twice n_communities, got {self.n_nodes} "
                f"for {self.n_communities} communities"
            )
        if not 0.0 <= self.w_out < self.w_in <= 1.0:
            raise ValidationError(
                f"weights must satisfy 0 <= w_out < w_in <= 1, got w_in={self.w_in}, w_out={self.w_out}"
            )
        if self.noise_sd < 0.0:
            raise ValidationError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.subjects_per_class < 1:
            raise ValidationError(f"subjects_per_class must be >= 1, got {self.subjects_per_class}")
        if self.class_structure not in CLASS_STRUCTURES:
            raise ValidationError(
                f"class_structure must be one of {CLASS_STRUCTURES}, got {self.class_structure!r}"
            )


def community_labels(spec: SynthSpec, class_id: int) -> np.ndarray:
    """Community index per node for class 0 or class 1.

    Class 0 splits nodes into n_communities contiguous blocks as equal as
    possible. Class 1 either merges communities 0 and 1 into one
    (block_merge) or shifts every node's community by rotating the
    assignment n_nodes // (2 * n_communities) positions (partition_shift).
    """
    if class_id not in (0, 1):
        raise ValidationError(f"class_id must be 0 or 1, got {class_id}")
    n, c = spec.n_nodes, spec.n_communities
    base, rem = divmod(n, c)
    sizes = [base + 1 if i < rem else base for i in range(c)]
    plain = np.repeat(np.arange(c), sizes)
    if class_id == 0:
        return plain
    if spec.class_structure == "block_merge":
        merged = plain.copy()
        merged[merged == 1] = 0
        return merged
    shift = n // (2 * c)
    return plain[(np.arange(n) + shift) % n]


def base_matrix(labels: np.ndarray, w_in: float, w_out: float) -> np.ndarray:
    """Noise-free block affinity: w_in inside a community, w_out across."""
    same = labels[:, None] == labels[None, :]
    base = np.where(same, w_in, w_out)
    np.fill_diagonal(base, 1.0)
    return base


def generate_subject(spec: SynthSpec, class_id: int, subject_index: int) -> AffinityMatrix:
    """One subject: the class block matrix plus symmetric clipped noise.

    The noise stream is keyed by (seed, class, subject), so any subject can
    be regenerated alone, bit for bit.
    """
    if subject_index < 0:
        raise ValidationError(f"subject_index must be >= 0, got {subject_index}")
    labels = community_labels(spec, class_id)
    base = base_matrix(labels, spec.w_in, spec.w_out)
    if spec.noise_sd > 0.0:
        rng = np.random.Generator(
            np.random.PCG64(
                np.random.SeedSequence(spec.seed, spawn_key=(_NS_SUBJECT, class_id, subject_index))
            )
        )
        n = spec.n_nodes
        iu = np.triu_indices(n, k=1)
        noise = np.zeros((n, n))
        noise[iu] = rng.normal(0.0, spec.noise_sd, size=iu[0].size)
        noise = noise + noise.T
        base = np.clip(base + noise, 0.0, 1.0)
        np.fill_diagonal(base, 1.0)
    return AffinityMatrix(base)


def generate_cohort(spec: SynthSpec, out_dir=None):
    """Build the full two-class cohort, optionally writing it to disk.

    Returns (cohort, manifest_dict). With out_dir set, per-subject CSVs go
    to out_dir/subjects/, the manifest to out_dir/manifest.json with paths
    relative to it, and the generating parameters to out_dir/synth_spec.json.
    """
    subjects = []
    entries = []
    for class_id, label in enumerate(("A", "B")):
        for idx in range(spec.subjects_per_class):
            sid = f"{label}{idx:03d}"
            affinity = generate_subject(spec, class_id, idx)
            subjects.append(Subject(sid, label, affinity))
            entries.append({"id": sid, "label": label, "path": f"subjects/{sid}.csv"})
    manifest = {
        "nodes": spec.n_nodes,
        "classes": ["A", "B"],
        "subjects": entries,
    }
    cohort = Cohort(tuple(subjects))
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "subjects").mkdir(parents=True, exist_ok=True)
        for subject, entry in zip(subjects, entries):
            write_affinity_csv(out_dir / entry["path"], subject.affinity)
        with open(out_dir / "manifest.json", "w", encoding="ascii") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out_dir / "synth_spec.json", "w", encoding="ascii") as fh:
            json.dump(spec.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return cohort, manifest


def load_cohort(manifest_path) -> Cohort:
    """Load a cohort from a manifest written by generate_cohort."""
    manifest_path = Path(manifest_path)
    try:
        with open(manifest_path, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest {manifest_path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{manifest_path}: not valid JSON: {exc}") from None
    for key in ("nodes", "classes", "subjects"):
        if key not in manifest:
            raise DataError(f"{manifest_path}: manifest is missing the {key!r} key")
    n_nodes = manifest["nodes"]
    if not isinstance(n_nodes, int) or n_nodes < 2:
        raise DataError(f"{manifest_path}: 'nodes' must be an integer >= 2, got {n_nodes!r}")
    classes = manifest["classes"]
    if not isinstance(classes, list) or len(classes) < 2:
        raise DataError(f"{manifest_path}: 'classes' must list at least 2 labels")
    subjects = []
    base = manifest_path.parent
    for entry in manifest["subjects"]:
        for key in ("id", "label", "path"):
            if key not in entry:
                raise DataError(f"{manifest_path}: subject entry missing {key!r}: {entry!r}")
        if entry["label"] not in classes:
            raise DataError(
                f"{manifest_path}: subject {entry['id']!r} has label {entry['label']!r}, "
                f"not in {classes}"
            )
        try:
            affinity = read_affinity_csv(base / entry["path"])
        except OSError as exc:
            raise DataError(f"cannot read subject {entry['id']!r}: {exc}") from None
        except ValidationError as exc:
            raise DataError(f"subject {entry['id']!r}: {exc}") from None
        if affinity.n_nodes != n_nodes:
            raise DataError(
                f"subject {entry['id']!r} has {affinity.n_nodes} nodes, manifest says {n_nodes}"
            )
        subjects.append(Subject(entry["id"], entry["label"], affinity))
    try:
        return Cohort(tuple(subjects))
    except ValidationError as exc:
        raise DataError(f"{manifest_path}: {exc}") from None
