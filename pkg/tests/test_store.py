import json
import os

import pytest

from emaml import nn, store as store_mod
from emaml.meta import ComplementEntry, PolicyComplement
from emaml.store import MissingRecordError, PolicyStore, RunRecord

SPEC = nn.NetworkSpec((4, 8, 8, 1), "sigmoid")


@pytest.fixture
def store(tmp_path):
    return PolicyStore(tmp_path / "store")


@pytest.mark.example
def test_save_load_forward_bit_identical(store, rng):
    th = nn.init_params(SPEC, rng)
    rid = store_mod.save_policy(store.path, th, {"fault_label": "nominal"}, "nominal")
    back, meta = store_mod.load_policy(store.path, rid)
    X = rng.normal(size=(100, 4))
    assert nn.forward(back, X).tobytes() == nn.forward(th, X).tobytes()
    assert meta["fault_label"] == "nominal"


@pytest.mark.example
def test_duplicate_id_rejected(store, rng):
    store.save_policy(nn.init_params(SPEC, rng), {}, "a")
    with pytest.raises(store_mod.DuplicateRecordError):
        store.save_policy(nn.init_params(SPEC, rng), {}, "a")


@pytest.mark.example
def test_corrupt_value_names_field(store, rng):
    store.save_policy(nn.init_params(SPEC, rng), {}, "a")
    path = store.policy_file("a")
    text = path.read_text()
    # flip one digit of the first stored value; the file stays valid JSON
    i = text.index('"values"')
    j = text.index("\n", text.index("\n", i) + 1) - 2
    digit = text[j]
    path.write_text(text[:j] + ("1" if digit != "1" else "2") + text[j + 1:])
    with pytest.raises(nn.CorruptRecordError) as exc:
        store.load_policy("a")
    assert exc.value.field_name == "values" and str(path) in str(exc.value)


@pytest.mark.example
def test_empty_label_list(store):
    assert len(store_mod.load_complement(store.path, [])) == 0


@pytest.mark.example
def test_complement_of_four(store, rng):
    labels = ["j1", "j3", "j5", "j7"]
    thetas = {}
    for l in labels:
        thetas[l] = nn.init_params(SPEC, rng)
        store.save_policy(thetas[l], {"fault_label": l, "trained_steps": 30000}, l)
    comp = store.load_complement(labels[::-1])
    assert comp.labels == labels[::-1]
    for e in comp:
        assert e.theta.values.tobytes() == thetas[e.label].values.tobytes()
        assert e.trained_steps == 30000


@pytest.mark.example
def test_missing_label_named(store, rng):
    for l in ("a", "b", "c"):
        store.save_policy(nn.init_params(SPEC, rng), {}, l)
    os.remove(store.policy_file("b"))
    with pytest.raises(MissingRecordError) as exc:
        store.load_complement(["a", "b", "c"])
    assert exc.value.missing == ["b"]


def test_mixed_specs_rejected(store, rng):
    store.save_policy(nn.init_params(SPEC, rng), {}, "a")
    store.save_policy(nn.init_params(nn.NetworkSpec((4, 3, 1), "sigmoid"), rng), {}, "b")
    with pytest.raises(nn.DimensionError):
        store.load_complement(["a", "b"])


def test_complement_manifest_records_divergence(store, rng):
    entries = []
    for i, l in enumerate(["a", "b"]):
        th = nn.init_params(SPEC, rng)
        store.save_policy(th, {"fault_label": f"fault-{l}"}, l)
        entries.append(ComplementEntry(th, l, 0, 1.5 - i))
    store.save_complement(PolicyComplement(tuple(entries)), name="s0")
    manifest = json.loads(store.manifest_path.read_text())
    info = manifest["complements"]["s0"]
    assert info["total_divergence"] == {"a": 1.5, "b": 0.5}
    assert info["provenance"] == {"a": "fault-a", "b": "fault-b"}
    loaded = store.load_curated_complement("s0")
    assert [e.total_divergence for e in loaded] == [1.5, 0.5]


def test_runs_roundtrip_and_missing_file(store):
    rec = RunRecord("r1", "cartpole", {"m_c": 1.0}, "nominal", 0, {})
    store.save_run(rec, "step,episode,cumulative_reward,wall_ms\n5,1,4.0,0\n")
    assert store.read_rewards("r1").endswith("5,1,4.0,0\n")
    with pytest.raises(store_mod.DuplicateRecordError):
        store.save_run(RunRecord("r1", "cartpole", {}, "x", 0, {}), "")
    os.remove(store.path / store.load_run("r1").reward_log_path)
    with pytest.raises(store_mod.StoreError, match="missing file"):
        store.load_run("r1")
    with pytest.raises(MissingRecordError):
        store.load_run("nope")


def test_atomic_write_leaves_old_file_on_failure(tmp_path, monkeypatch):
    target = tmp_path / "f.txt"
    store_mod.atomic_write(target, "old")

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr(store_mod.os, "replace", boom)
    with pytest.raises(OSError):
        store_mod.atomic_write(target, "new")
    assert target.read_text() == "old"
    assert os.listdir(tmp_path) == ["f.txt"]


def test_invalid_record_id(store, rng):
    with pytest.raises(store_mod.StoreError):
        store.save_policy(nn.init_params(SPEC, rng), {}, "../escape")


def test_unwritable_store_reports_path(tmp_path, rng):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    s = PolicyStore(blocker / "store")
    with pytest.raises(store_mod.StoreError, match="store"):
        s.save_policy(nn.init_params(SPEC, rng), {}, "a")
