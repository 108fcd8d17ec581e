"""On-disk policy store.

Layout::

    <store>/manifest                      JSON: policies, runs, curated complement
    <store>/policies/<id>.params          one ParameterVector per file
    <store>/runs/<run_id>/rewards.csv     per-episode reward log

Every file is written to a temporary sibling and renamed into place, so an
interrupted write never leaves a readable but wrong record.
"""

from __future__ import annotations

import json
import os
import re
import tempfile
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

from . import nn
from .meta import ComplementEntry, PolicyComplement

_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._+-]*$")


class StoreError(RuntimeError):
    pass


class DuplicateRecordError(StoreError):
    pass


class MissingRecordError(StoreError):
    def __init__(self, kind, missing):
        self.missing = list(missing)
        super().__init__(f"{kind} not found in store: {', '.join(self.missing)}")


def atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class RunRecord:
    run_id: str
    env_kind: str
    process_params: dict
    fault_label: str
    seed: int
    config: dict
    reward_log_path: str = ""
    theta_path: str = ""
    method: str = ""
    total_reward: float = 0.0
    steps: int = 0
    extra: dict = field(default_factory=dict)


class PolicyStore:
    def __init__(self, path):
        self.path = Path(path)

    # -- manifest ------------------------------------------------------------
    @property
    def manifest_path(self) -> Path:
        return self.path / "manifest"

    def read_manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"format": 1, "policies": {}, "runs": {}, "complements": {}}
        try:
            return json.loads(self.manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise StoreError(f"cannot read manifest {self.manifest_path}: {exc}") from exc

    def _write_manifest(self, manifest: dict):
        try:
            atomic_write(self.manifest_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        except OSError as exc:
            raise StoreError(f"cannot write manifest {self.manifest_path}: {exc}") from exc

    # -- policies --------------------------------------------------------------
    def policy_file(self, record_id: str) -> Path:
        return self.path / "policies" / f"{record_id}.params"

    def has_policy(self, record_id: str) -> bool:
        return record_id in self.read_manifest()["policies"]

    def save_policy(self, theta: nn.ParameterVector, metadata: dict | None = None,
                    record_id: str | None = None) -> str:
        metadata = dict(metadata or {})
        record_id = record_id or metadata.get("label")
        if not record_id or not _ID_RE.match(record_id):
            raise StoreError(f"invalid record id {record_id!r}")
        manifest = self.read_manifest()
        if record_id in manifest["policies"] or self.policy_file(record_id).exists():
            raise DuplicateRecordError(f"policy {record_id!r} already exists in {self.path}")
        path = self.policy_file(record_id)
        try:
            atomic_write(path, nn.dumps(theta, metadata))
        except OSError as exc:
            raise StoreError(f"cannot write policy file {path}: {exc}") from exc
        manifest["policies"][record_id] = {
            "file": str(path.relative_to(self.path)),
            "spec": theta.spec.spec_id,
            "metadata": metadata,
        }
        self._write_manifest(manifest)
        return record_id

    def load_policy(self, record_id: str) -> tuple[nn.ParameterVector, dict]:
        path = self.policy_file(record_id)
        if not path.exists():
            raise MissingRecordError("policy", [record_id])
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise StoreError(f"cannot read policy file {path}: {exc}") from exc
        return nn.loads(text, path)

    def load_complement(self, labels) -> PolicyComplement:
        labels = list(labels)
        manifest = self.read_manifest()
        missing = [l for l in labels if l not in manifest["policies"] or not self.policy_file(l).exists()]
        if missing:
            raise MissingRecordError("complement policies", missing)
        entries = []
        for label in labels:
            theta, meta = self.load_policy(label)
            entries.append(ComplementEntry(theta, label, int(meta.get("trained_steps", 0))))
        return PolicyComplement(tuple(entries))

    # -- complement ----------------------------------------------------------------
    def save_complement(self, complement: PolicyComplement, extra: dict | None = None,
                        name: str = "default"):
        """Record ``complement`` as the curated complement ``name`` (replacing any previous one)."""
        manifest = self.read_manifest()
        missing = [l for l in complement.labels if l not in manifest["policies"]]
        if missing:
            raise MissingRecordError("complement policies", missing)
        manifest["complements"][name] = {
            "labels": complement.labels,
            "total_divergence": {e.label: e.total_divergence for e in complement},
            "provenance": {e.label: manifest["policies"][e.label]["metadata"].get("fault_label", e.label)
                           for e in complement},
            "curated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            **(extra or {}),
        }
        self._write_manifest(manifest)

    def complement_info(self, name: str = "default") -> dict | None:
        return self.read_manifest()["complements"].get(name)

    def load_curated_complement(self, name: str = "default") -> PolicyComplement:
        info = self.complement_info(name)
        if not info:
            raise MissingRecordError("curated complement", [name])
        comp = self.load_complement(info["labels"])
        totals = info.get("total_divergence", {})
        return PolicyComplement(tuple(replace(e, total_divergence=totals.get(e.label)) for e in comp))

    # -- runs --------------------------------------------------------------------------
    def run_dir(self, run_id: str) -> Path:
        return self.path / "runs" / run_id

    def save_run(self, record: RunRecord, rewards_csv: str) -> RunRecord:
        if not _ID_RE.match(record.run_id):
            raise StoreError(f"invalid run id {record.run_id!r}")
        manifest = self.read_manifest()
        if record.run_id in manifest["runs"]:
            raise DuplicateRecordError(f"run {record.run_id!r} already exists in {self.path}")
        csv_path = self.run_dir(record.run_id) / "rewards.csv"
        try:
            atomic_write(csv_path, rewards_csv)
        except OSError as exc:
            raise StoreError(f"cannot write {csv_path}: {exc}") from exc
        record.reward_log_path = str(csv_path.relative_to(self.path))
        manifest["runs"][record.run_id] = asdict(record)
        self._write_manifest(manifest)
        return record

    def load_run(self, run_id: str) -> RunRecord:
        runs = self.read_manifest()["runs"]
        if run_id not in runs:
            raise MissingRecordError("run", [run_id])
        record = RunRecord(**runs[run_id])
        for rel in (record.reward_log_path, record.theta_path):
            if rel and not (self.path / rel).exists():
                raise StoreError(f"run {run_id!r} references missing file {rel}")
        return record

    def read_rewards(self, run_id: str) -> str:
        record = self.load_run(run_id)
        return (self.path / record.reward_log_path).read_text(encoding="utf-8")


def save_policy(store_path, theta, metadata=None, record_id=None) -> str:
    return PolicyStore(store_path).save_policy(theta, metadata, record_id)


def load_policy(store_path, record_id):
    return PolicyStore(store_path).load_policy(record_id)


def load_complement(store_path, labels) -> PolicyComplement:
    return PolicyStore(store_path).load_complement(labels)
