import csv
import io

import numpy as np
import pytest
import yaml

from emaml import cli, envs, harness, meta, ppo
from emaml.store import MissingRecordError, PolicyStore

SMALL = {
    "runs": {"nominal_steps": 1000, "complement_steps": 1000, "adapt_steps": 1000, "divergence_buffer": 100},
    "meta": {"memory_size": 200, "task_steps": 100, "tasks": 2, "k_out": 2},
}


@pytest.fixture(scope="module")
def small_config():
    return harness.build_config(SMALL)


@pytest.fixture(scope="module")
def built(small_config, tmp_path_factory):
    store = PolicyStore(tmp_path_factory.mktemp("built"))
    harness.cmd_train_nominal(small_config, store, 0)
    harness.cmd_build_complement(small_config, store, 0)
    return store


def write_config(tmp_path, doc):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(doc))
    return str(path)


# -- config ------------------------------------------------------------------------

def test_default_protocol_settings():
    c = harness.build_config()
    assert c.ppo == ppo.PpoConfig() and c.meta == meta.MetaConfig()
    assert [f.label for f in c.complement_faults] == [f"j{i}" for i in range(1, 8)]
    assert c.make_env(c.adapt_fault).params.as_tuple() == (1.5, 0.125, 0.75, -12.0)
    assert c.runs.divergence_buffer == 500
    f = harness.build_config({"env": {"kind": "fueltank"}})
    assert f.ppo.t_update == 1000 and f.meta.memory_size == 4000 and f.runs.divergence_buffer == 1000
    assert f.make_env(f.fault("j7")).params.resistances == (100.0, 75.0, 100.0, 100.0, 75.0, 100.0)


def test_config_errors_listed_exhaustively():
    with pytest.raises(harness.ConfigError) as exc:
        harness.build_config({"ppo": {"gamma": 1.5, "epochs": 0}, "meta": {"variant": "x"},
                              "runs": {"adapt_steps": -1}, "extra": {},
                              "faults": {"adapt": {"label": "bad", "edit": {"m_c": {"set": 0}}}}})
    text = "\n".join(exc.value.errors)
    for needle in ("gamma", "epochs", "variant", "adapt_steps", "extra", "m_c"):
        assert needle in text


@pytest.mark.example
def test_invalid_gamma_rejected_before_any_step(tmp_path, monkeypatch):
    calls = []
    monkeypatch.setattr(envs, "cartpole_step", lambda *a: calls.append(a))
    path = write_config(tmp_path, {"ppo": {"gamma": 1.5}})
    code = cli.main(["train-nominal", "--config", path, "--store", str(tmp_path / "s")])
    assert code == 2 and calls == []
    assert not (tmp_path / "s").exists()


def test_show_config_roundtrips(capsys):
    assert cli.main(["show-config"]) == 0
    doc = yaml.safe_load(capsys.readouterr().out)
    assert harness.build_config(doc).document == harness.build_config().document


# -- seeding ---------------------------------------------------------------------------

def test_streams_are_keyed_not_ordered():
    a = harness.rng_for(0, "adapt", "pprime", "train").random(5)
    harness.rng_for(0, "something", "else").random(100)
    b = harness.rng_for(0, "adapt", "pprime", "train").random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, harness.rng_for(1, "adapt", "pprime", "train").random(5))
    assert not np.array_equal(a, harness.rng_for(0, "adapt", "pprime", "buffer").random(5))


# -- commands ----------------------------------------------------------------------------

@pytest.mark.example
def test_fixed_seed_identical_csv(small_config, tmp_path):
    texts = []
    for name in ("a", "b"):
        store = PolicyStore(tmp_path / name)
        rec = harness.cmd_train_nominal(small_config, store, 3)
        texts.append(store.read_rewards(rec.run_id))
    assert texts[0] == texts[1]


@pytest.mark.example
def test_build_complement_needs_nominal(small_config, tmp_path):
    with pytest.raises(MissingRecordError, match="train-nominal"):
        harness.cmd_build_complement(small_config, PolicyStore(tmp_path), 0)


@pytest.mark.example
def test_fault_list_shorter_than_s_rejected(small_config, built):
    with pytest.raises(harness.ConfigError, match="size 4"):
        harness.cmd_build_complement(small_config, built, 0, small_config.complement_faults[:3])
    with pytest.raises(harness.ConfigError):
        harness.build_config({"faults": {"complement": SMALL_FAULTS[:3]}})


SMALL_FAULTS = harness.default_config()["faults"]["complement"]


@pytest.mark.example
def test_seven_faults_curated_to_four_with_divergence(built):
    info = built.complement_info(harness.complement_name(0))
    assert len(info["labels"]) == 4 and len(info["candidates"]) == 7
    assert set(info["total_divergence"]) == set(info["labels"])
    totals = [info["total_divergence"][l] for l in info["labels"]]
    assert totals == sorted(totals, reverse=True)
    assert all(info["all_total_divergence"][l] == info["total_divergence"][l] for l in info["labels"])


def test_build_complement_reuses_trained_policies(small_config, built):
    runs_before = set(built.read_manifest()["runs"])
    harness.cmd_build_complement(small_config, built, 0)
    assert set(built.read_manifest()["runs"]) == runs_before


def test_prune_reduces_size(small_config, built, tmp_path):
    kept = harness.cmd_prune(small_config, built, 0, 2)
    assert len(kept) == 2
    harness.cmd_prune(small_config, built, 0, 4)
    assert len(built.load_curated_complement("s0")) == 4


@pytest.mark.example
def test_rank_above_s_rejected(small_config, built):
    with pytest.raises(harness.ConfigError, match="rank"):
        harness.cmd_adapt(small_config, built, 0, "emaml", rank=5)


def test_emaml_needs_complement(small_config, tmp_path):
    store = PolicyStore(tmp_path)
    harness.cmd_train_nominal(small_config, store, 0)
    with pytest.raises(MissingRecordError, match="complement"):
        harness.cmd_adapt(small_config, store, 0, "emaml", 2)
    assert store.read_manifest()["runs"].keys() == {"nominal-s0"}


@pytest.mark.example
def test_score_table_matches_rank_and_select(small_config, built):
    rec = harness.cmd_adapt(small_config, built, 0, "emaml", rank=2, variant="reptile")
    scores = rec.extra["scores"]
    comp = built.load_curated_complement("s0")
    theta0, _ = built.load_policy(harness.nominal_id(0))
    mem = ppo.collect(small_config.make_env(small_config.adapt_fault), theta0,
                      small_config.meta.memory_size, harness.rng_for(0, "adapt", "pprime", "buffer"))
    expected = meta.rank_and_select(comp, mem, 4, 0.99, returns="standardized").labels
    assert [row["label"] for row in scores] == expected
    assert rec.extra["selected"] == expected[:2]
    assert [row["rank"] for row in scores] == [1, 2, None, None]


def test_methods_share_buffer_and_count_env_steps(small_config, built, monkeypatch):
    counts = {"n": 0}
    real = envs.cartpole_step

    def counting(*a):
        counts["n"] += 1
        return real(*a)

    monkeypatch.setattr(envs, "cartpole_step", counting)
    recs = {}
    for method in ("emaml", "ppo", "maml"):
        counts["n"] = 0
        recs[method] = harness.cmd_adapt(small_config, built, 0, method, rank=4, variant="fomaml")
        recs[method].extra["counted"] = counts["n"]
    m = small_config.meta
    for method in ("emaml", "ppo"):
        assert recs[method].extra["counted"] == m.memory_size + small_config.runs.adapt_steps
    assert recs["maml"].extra["counted"] == (m.memory_size + small_config.runs.adapt_steps
                                             + recs["maml"].extra["meta_env_steps"])
    assert len({r.extra["buffer_reward"] for r in recs.values()}) == 1


# -- report -------------------------------------------------------------------------------

def _curve(text):
    return [(int(r["step"]), float(r["cumulative_reward"])) for r in csv.DictReader(io.StringIO(text))]


def _fake_run(store, run_id, rows):
    from emaml.store import RunRecord
    body = "step,episode,cumulative_reward,wall_ms\n" + "".join(
        f"{s},{i + 1},{r},0\n" for i, (s, r) in enumerate(rows))
    store.save_run(RunRecord(run_id, "cartpole", {}, "f", 0, {}), body)


@pytest.mark.example
def test_report_single_run_two_columns(tmp_path):
    store = PolicyStore(tmp_path)
    _fake_run(store, "a", [(10, 9.0), (25, 14.0)])
    rows = list(csv.reader(io.StringIO(harness.cmd_report(store, ["a"]))))
    assert rows == [["step", "a"], ["10", "9.0"], ["25", "23.0"]]


@pytest.mark.example
def test_report_pads_shorter_run(tmp_path):
    store = PolicyStore(tmp_path)
    _fake_run(store, "long", [(10, 9.0), (30, 19.0)])
    _fake_run(store, "short", [(20, 19.0)])
    rows = list(csv.reader(io.StringIO(harness.cmd_report(store, ["long", "short"]))))
    assert rows[0] == ["step", "long", "short[padded]", "mean", "spread"]
    assert [r[2] for r in rows[1:]] == ["0.0", "19.0", "19.0"]
    assert [r[1] for r in rows[1:]] == ["9.0", "9.0", "28.0"]


@pytest.mark.example
def test_report_mean_spot_checks(small_config, built):
    ids = [r for r in built.read_manifest()["runs"] if r.startswith("complement-")][:3]
    rows = list(csv.DictReader(io.StringIO(harness.cmd_report(built, ids))))
    curves = [_curve(built.read_rewards(r)) for r in ids]
    for row in (rows[5], rows[len(rows) // 2], rows[-1]):
        step = int(row["step"])
        totals = [sum(r for s, r in c if s <= step) for c in curves]
        assert abs(float(row["mean"]) - sum(totals) / 3) <= 1e-9
        assert abs(float(row["spread"]) - float(np.std(totals, ddof=1))) <= 1e-9


def test_report_missing_run_named(built):
    with pytest.raises(MissingRecordError, match="ghost"):
        harness.cmd_report(built, ["nominal-s0", "ghost"])


# -- CLI ---------------------------------------------------------------------------------

def test_cli_end_to_end_exit_codes(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL)
    st = str(tmp_path / "store")
    assert cli.main(["train-nominal", "--config", cfg, "--store", st, "--seed", "1"]) == 0
    assert cli.main(["build-complement", "--config", cfg, "--store", st, "--seed", "1"]) == 0
    assert cli.main(["adapt", "--config", cfg, "--store", st, "--seed", "1", "--method", "emaml",
                     "--rank", "2", "--variant", "fomaml"]) == 0
    assert cli.main(["adapt", "--config", cfg, "--store", st, "--seed", "1", "--method", "ppo"]) == 0
    out = tmp_path / "report.csv"
    assert cli.main(["report", "--store", st, "--out", str(out),
                     "adapt-emaml-r2-fomaml-pprime-s1", "adapt-ppo-pprime-s1"]) == 0
    assert out.read_text().startswith("step,")
    assert cli.main(["adapt", "--config", cfg, "--store", st, "--rank", "9"]) == 2
    assert cli.main(["report", "--store", st, "nope"]) == 1
    assert cli.main(["build-complement", "--config", cfg, "--store", str(tmp_path / "empty")]) == 1
    assert cli.main(["train-nominal", "--config", cfg, "--store", st, "--steps", "10"]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["adapt", "--method", "sgd"])
    assert exc.value.code == 2


# -- multi-seed protocol ----------------------------------------------------------------

@pytest.mark.slow
@pytest.mark.example
def test_nominal_training_improves_most_seeds(protocol):
    _, runs = protocol
    wins = sum(r["nominal"].extra["last10_mean"] > r["nominal"].extra["first10_mean"] for r in runs.values())
    assert wins >= 4
