"""End-to-end fault-adaptation protocol: nominal training, complement, adaptation, reports.

Every random stream is derived from the master seed and a tuple of string
keys, so a given run always sees the same numbers no matter which other
runs exist in the store or in what order commands were issued.
"""

from __future__ import annotations

import copy
import csv
import io
import logging
import re
import zlib
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping

import numpy as np
import yaml

from . import envs, meta, nn, ppo
from .store import MissingRecordError, PolicyStore, RunRecord

log = logging.getLogger(__name__)

METHODS = ("emaml", "maml", "ppo")
_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_+-]*$")


class ConfigError(ValueError):
    """Configuration problems, all of them at once."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


# -- defaults -----------------------------------------------------------------------

def _cp_fault(label, m_c, m_p, l, F):
    return {"label": label,
            "edit": {"m_c": {"set": m_c}, "m_p": {"set": m_p}, "l": {"set": l}, "F": {"set": F}}}


def _ft_fault(label, resistances, pumps, engines):
    return {"label": label, "edit": {"resistances": {"set": resistances},
                                     "pump_rates": {"set": pumps},
                                     "engine_rates": {"set": engines}}}


_DEFAULTS = {
    "cartpole": {
        "env": {"kind": "cartpole", "params": {}},
        "ppo": {},
        "meta": {},
        "faults": {
            "complement": [
                _cp_fault("j1", 1.0, 0.1, 0.5, 10.0),
                _cp_fault("j2", 1.5, 0.1, 0.5, 10.0),
                _cp_fault("j3", 2.0, 0.2, 0.5, 15.0),
                _cp_fault("j4", 2.0, 0.15, 0.5, 15.0),
                _cp_fault("j5", 1.0, 0.1, 0.5, -10.0),
                _cp_fault("j6", 1.0, 0.1, 0.5, -12.0),
                _cp_fault("j7", 2.0, 0.2, 0.5, -15.0),
            ],
            # heavier cart and pole, longer pole, stronger force pushing the other way
            "adapt": {"label": "pprime", "edit": {"m_c": {"scale": 1.5}, "m_p": {"scale": 1.25},
                                                  "l": {"scale": 1.5}, "F": {"scale": -1.2}}},
        },
        "runs": {"nominal_steps": 30000, "complement_steps": 30000, "adapt_steps": 30000,
                 "divergence_buffer": 500,
                 "maml_spread": {"m_c": 0.5, "m_p": 0.5, "l": 0.5, "F": 0.5},
                 "wall_clock": False},
    },
    "fueltank": {
        "env": {"kind": "fueltank", "params": {}},
        "ppo": {},
        "meta": {},
        "faults": {
            "complement": [
                _ft_fault("j1", [100, 100, 100, 70, 80, 90], [0.1, 0.1, 0.1, 0.0, 0.1, 0.1], [0.05, 0.1]),
                _ft_fault("j2", [100, 100, 100, 70, 80, 90], [0.0, 0.1, 0.1, 0.0, 0.1, 0.1], [0.05, 0.1]),
                _ft_fault("j3", [100, 100, 100, 150, 200, 100], [0.1] * 6, [0.1, 0.05]),
                _ft_fault("j4", [100, 100, 100, 150, 200, 100], [0.1, 0.1, 0.1, 0.1, 0.0, 0.0], [0.1, 0.05]),
                _ft_fault("j5", [90, 100, 100, 70, 80, 90], [0.1, 0.1, 0.0, 0.1, 0.1, 0.1], [0.05, 0.1]),
                _ft_fault("j6", [90, 100, 100, 70, 80, 90], [0.0, 0.1, 0.0, 0.1, 0.1, 0.0], [0.05, 0.1]),
                _ft_fault("j7", [100, 75, 100, 100, 75, 100], [0.1, 0.0, 0.1, 0.1, 0.1, 0.1], [0.05, 0.1]),
            ],
            "adapt": {"label": "pprime", "edit": {"engine_rates": {"set": [0.15, 0.1]},
                                                  "pump_rates": {"disable": [1]}}},
        },
        "runs": {"nominal_steps": 30000, "complement_steps": 30000, "adapt_steps": 30000,
                 "divergence_buffer": 1000,
                 "maml_spread": {"resistances": 0.3, "pump_rates": 0.5, "engine_rates": 0.5},
                 "wall_clock": False},
    },
}


def default_config(kind: str = "cartpole") -> dict:
    """Raw config document with every default filled in."""
    if kind not in _DEFAULTS:
        raise ConfigError([f"env.kind must be one of {sorted(_DEFAULTS)}, got {kind!r}"])
    doc = copy.deepcopy(_DEFAULTS[kind])
    doc["ppo"] = _jsonable(asdict(ppo.PpoConfig.for_env(kind)))
    doc["meta"] = _jsonable(asdict(meta.MetaConfig.for_env(kind)))
    doc["env"]["params"] = _jsonable(envs.params_to_dict(envs.PARAM_CLASSES[kind]()))
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# -- validated config ----------------------------------------------------------------

@dataclass(frozen=True)
class Fault:
    label: str
    edit: dict


@dataclass(frozen=True)
class RunSettings:
    nominal_steps: int = 30000
    complement_steps: int = 30000
    adapt_steps: int = 30000
    divergence_buffer: int = 500
    maml_spread: dict = field(default_factory=dict)
    wall_clock: bool = False


@dataclass(frozen=True)
class Config:
    env_kind: str
    env_params: Any
    ppo: ppo.PpoConfig
    meta: meta.MetaConfig
    complement_faults: tuple
    adapt_fault: Fault
    runs: RunSettings
    document: dict

    def make_env(self, fault: Fault | None = None):
        params = envs.inject_fault(self.env_params, fault.edit) if fault else self.env_params
        return envs.make_env(self.env_kind, params)

    def fault(self, label: str) -> Fault:
        for f in (*self.complement_faults, self.adapt_fault):
            if f.label == label:
                return f
        raise KeyError(label)

    def dumps(self) -> str:
        return yaml.safe_dump(self.document, sort_keys=False)


def _merge(base: dict, over: Mapping) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _build_section(cls, values: Mapping, section: str, errors: list):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    for key in unknown:
        errors.append(f"{section}: unknown key {key!r}")
    kwargs = {k: (tuple(v) if isinstance(v, list) else v) for k, v in values.items() if k in names}
    try:
        obj = object.__new__(cls)
        for f in fields(cls):
            object.__setattr__(obj, f.name, kwargs.get(f.name, f.default))
        problems = obj.validate()
    except (TypeError, ValueError) as exc:
        errors.append(f"{section}: {exc}")
        return None
    errors.extend(f"{section}: {p}" for p in problems)
    if problems:
        return None
    return cls(**kwargs)


def _parse_fault(raw, where: str, nominal, errors: list) -> Fault | None:
    if not isinstance(raw, Mapping) or "label" not in raw:
        errors.append(f"{where}: a fault needs a 'label' and an 'edit' mapping")
        return None
    label = str(raw["label"])
    if not _LABEL_RE.match(label):
        errors.append(f"{where}: label {label!r} must be letters, digits, '.', '_', '+' or '-'")
        return None
    edit = raw.get("edit") or {}
    if not isinstance(edit, Mapping):
        errors.append(f"{where} ({label}): 'edit' must be a mapping")
        return None
    if nominal is not None:
        try:
            envs.inject_fault(nominal, edit)
        except (envs.InvalidParamsError, ValueError, TypeError, IndexError) as exc:
            errors.append(f"{where} ({label}): {exc}")
            return None
    return Fault(label, _jsonable(dict(edit)))


def build_config(document: Mapping | None = None) -> Config:
    """Merge ``document`` over the defaults for its env kind and validate every section."""
    document = dict(document or {})
    errors = []
    unknown = sorted(set(document) - {"env", "ppo", "meta", "faults", "runs"})
    errors.extend(f"unknown section {k!r}" for k in unknown)
    kind = (document.get("env") or {}).get("kind", "cartpole")
    if kind not in _DEFAULTS:
        raise ConfigError([f"env.kind must be one of {sorted(_DEFAULTS)}, got {kind!r}"] + errors)
    doc = default_config(kind)
    for section in ("env", "ppo", "meta", "runs"):
        if section in document and document[section] is not None:
            if not isinstance(document[section], Mapping):
                errors.append(f"{section}: must be a mapping")
                continue
            doc[section] = _merge(doc[section], document[section])
    if document.get("faults") is not None:
        doc["faults"] = {**doc["faults"], **document["faults"]}

    try:
        env_params = envs.params_from_dict(kind, {k: (tuple(v) if isinstance(v, list) else v)
                                                  for k, v in (doc["env"].get("params") or {}).items()})
    except (envs.InvalidParamsError, TypeError, ValueError) as exc:
        errors.append(f"env.params: {exc}")
        env_params = None
    for key in sorted(set(doc["env"]) - {"kind", "params"}):
        errors.append(f"env: unknown key {key!r}")

    ppo_cfg = _build_section(ppo.PpoConfig, doc["ppo"], "ppo", errors)
    meta_cfg = _build_section(meta.MetaConfig, doc["meta"], "meta", errors)

    faults = doc["faults"]
    comp = []
    raw_list = faults.get("complement") or []
    if not isinstance(raw_list, list):
        errors.append("faults.complement: must be a list")
        raw_list = []
    for i, raw in enumerate(raw_list):
        f = _parse_fault(raw, f"faults.complement[{i}]", env_params, errors)
        if f is not None:
            comp.append(f)
    labels = [f.label for f in comp]
    dupes = sorted({l for l in labels if labels.count(l) > 1})
    if dupes:
        errors.append(f"faults.complement: duplicate labels {dupes}")
    adapt = _parse_fault(faults.get("adapt"), "faults.adapt", env_params, errors)
    if meta_cfg is not None and len(raw_list) < meta_cfg.size:
        errors.append(f"faults.complement: {len(raw_list)} faults cannot fill a complement "
                      f"of size {meta_cfg.size}")

    runs_cfg = None
    r = doc["runs"]
    for key in sorted(set(r) - {f.name for f in fields(RunSettings)}):
        errors.append(f"runs: unknown key {key!r}")
    for key in ("nominal_steps", "complement_steps", "adapt_steps", "divergence_buffer"):
        v = r.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            errors.append(f"runs.{key} must be a positive integer, got {v!r}")
    spread = r.get("maml_spread") or {}
    if env_params is not None and isinstance(spread, Mapping):
        names = {f.name for f in fields(env_params)}
        for k, v in spread.items():
            if k not in names:
                errors.append(f"runs.maml_spread: {kind} has no parameter {k!r}")
            elif not isinstance(v, (int, float)) or not 0 <= v < 1:
                errors.append(f"runs.maml_spread.{k} must be in [0, 1), got {v!r}")
    if ppo_cfg is not None:
        for key in ("nominal_steps", "complement_steps", "adapt_steps"):
            v = r.get(key)
            if isinstance(v, int) and 0 < v < ppo_cfg.t_update:
                errors.append(f"runs.{key} ({v}) is shorter than one PPO update ({ppo_cfg.t_update})")
    if errors:
        raise ConfigError(errors)
    runs_cfg = RunSettings(**{k: r[k] for k in (f.name for f in fields(RunSettings)) if k in r})
    return Config(kind, env_params, ppo_cfg, meta_cfg, tuple(comp), adapt, runs_cfg, doc)


def load_config(path=None, overrides: Mapping | None = None) -> Config:
    document = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                document = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError([f"cannot read config {path}: {exc}"]) from None
        except yaml.YAMLError as exc:
            raise ConfigError([f"config {path} is not valid YAML: {exc}"]) from None
        if not isinstance(document, Mapping):
            raise ConfigError([f"config {path} must be a mapping of sections"])
    for section, values in (overrides or {}).items():
        document[section] = _merge(document.get(section) or {}, values)
    return build_config(document)


# -- seeding -----------------------------------------------------------------------------

def _key(k) -> int:
    if isinstance(k, (int, np.integer)) and not isinstance(k, bool):
        return int(k)
    return zlib.crc32(str(k).encode("utf-8"))


def rng_for(master: int, *keys) -> np.random.Generator:
    """Independent counter-based stream for ``keys`` under ``master``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


# -- identifiers -----------------------------------------------------------------------

def nominal_id(seed: int) -> str:
    return f"nominal.s{seed}"


def fault_policy_id(label: str, seed: int) -> str:
    return f"{label}.s{seed}"


def complement_name(seed: int) -> str:
    return f"s{seed}"


def adapt_run_id(method: str, fault: str, seed: int, rank: int | None = None,
                 variant: str | None = None) -> str:
    if method == "ppo":
        return f"adapt-ppo-{fault}-s{seed}"
    if method == "maml":
        return f"adapt-maml-{variant}-{fault}-s{seed}"
    return f"adapt-emaml-r{rank}-{variant}-{fault}-s{seed}"


def _record(config: Config, run_id, env_params, fault_label, seed, method, result: ppo.PpoResult,
            theta_path="", extra=None) -> RunRecord:
    return RunRecord(run_id=run_id, env_kind=config.env_kind,
                     process_params=_jsonable(envs.params_to_dict(env_params)),
                     fault_label=fault_label, seed=int(seed), config=config.document,
                     theta_path=theta_path, method=method, total_reward=float(result.total_reward),
                     steps=int(result.steps), extra=dict(extra or {}))


def _csv(config: Config, result: ppo.PpoResult) -> str:
    return ppo.reward_log_csv(result.reward_log, config.runs.wall_clock)


def _load_nominal(store: PolicyStore, seed: int):
    try:
        theta, _ = store.load_policy(nominal_id(seed))
        theta_v, _ = store.load_policy(nominal_id(seed) + ".value")
    except MissingRecordError:
        raise MissingRecordError(
            "nominal policy", [f"{nominal_id(seed)} (run train-nominal with --seed {seed} first)"]) from None
    return theta, theta_v


# -- commands -----------------------------------------------------------------------------

def cmd_train_nominal(config: Config, store: PolicyStore, seed: int = 0,
                      steps: int | None = None) -> RunRecord:
    """PPO-train a controller on the nominal process from a seeded random init."""
    steps = int(steps or config.runs.nominal_steps)
    env = config.make_env()
    init = rng_for(seed, "nominal", "init")
    theta = nn.init_params(config.ppo.action_spec(env), init)
    theta_v = nn.init_params(config.ppo.value_spec(env), init)
    result = ppo.ppo_train(env, theta, theta_v, config.ppo, steps, rng_for(seed, "nominal", "train"),
                           config.runs.wall_clock)
    pid = nominal_id(seed)
    store.save_policy(result.theta, {"label": pid, "fault_label": "nominal", "seed": seed,
                                     "trained_steps": result.steps}, pid)
    store.save_policy(result.theta_v, {"label": pid + ".value", "seed": seed}, pid + ".value")
    record = _record(config, f"nominal-s{seed}", env.params, "nominal", seed, "ppo", result,
                     str(store.policy_file(pid).relative_to(store.path)),
                     {"first10_mean": ppo.episode_mean(result.reward_log, True),
                      "last10_mean": ppo.episode_mean(result.reward_log, False),
                      "updates": result.updates})
    return store.save_run(record, _csv(config, result))


def train_fault_policy(config: Config, store: PolicyStore, fault: Fault, seed: int,
                       steps: int | None = None) -> str:
    """PPO-train one complement policy under ``fault`` from the nominal controller."""
    theta0, theta_v0 = _load_nominal(store, seed)
    steps = int(steps or config.runs.complement_steps)
    env = config.make_env(fault)
    result = ppo.ppo_train(env, theta0, theta_v0, config.ppo, steps,
                           rng_for(seed, "complement", fault.label), config.runs.wall_clock)
    pid = fault_policy_id(fault.label, seed)
    store.save_policy(result.theta, {"label": pid, "fault_label": fault.label, "seed": seed,
                                     "trained_steps": result.steps, "edit": fault.edit}, pid)
    store.save_run(_record(config, f"complement-{fault.label}-s{seed}", env.params, fault.label, seed,
                           "ppo", result, str(store.policy_file(pid).relative_to(store.path)),
                           {"last10_mean": ppo.episode_mean(result.reward_log, False)}),
                   _csv(config, result))
    return pid


def divergence_buffer(config: Config, store: PolicyStore, seed: int) -> ppo.Memory:
    theta0, _ = _load_nominal(store, seed)
    return ppo.collect(config.make_env(), theta0, config.runs.divergence_buffer,
                       rng_for(seed, "curate", "buffer"))


def cmd_prune(config: Config, store: PolicyStore, seed: int = 0, size: int | None = None,
              labels=None) -> meta.PolicyComplement:
    """Curate trained fault policies down to the ``size`` most mutually divergent ones."""
    size = config.meta.size if size is None else int(size)
    if labels is None:
        info = store.complement_info(complement_name(seed))
        if info is None:
            raise MissingRecordError("curated complement", [complement_name(seed)])
        labels = info.get("candidates", info["labels"])
    labels = list(labels)
    if size > len(labels):
        raise ConfigError([f"cannot keep {size} policies out of {len(labels)} candidates"])
    candidates = store.load_complement(labels)
    memory = divergence_buffer(config, store, seed)
    kept = meta.curate_complement(candidates, size, memory)
    D = meta.divergence_matrix(candidates, memory)
    store.save_complement(kept, {"candidates": labels, "size": size, "seed": seed,
                                 "buffer_steps": len(memory),
                                 "all_total_divergence": dict(zip(labels, D.sum(axis=1).tolist()))},
                          complement_name(seed))
    return kept


def cmd_build_complement(config: Config, store: PolicyStore, seed: int = 0,
                         faults=None, steps: int | None = None) -> meta.PolicyComplement:
    """Train a policy per fault (skipping ones already stored) and curate to ``meta.size``."""
    faults = list(config.complement_faults if faults is None else faults)
    if len(faults) < config.meta.size:
        raise ConfigError([f"{len(faults)} faults cannot fill a complement of size {config.meta.size}"])
    _load_nominal(store, seed)
    labels = []
    for fault in faults:
        pid = fault_policy_id(fault.label, seed)
        if store.has_policy(pid):
            log.info("reusing stored policy %s", pid)
        else:
            log.info("training complement policy %s", pid)
            train_fault_policy(config, store, fault, seed, steps)
        labels.append(pid)
    return cmd_prune(config, store, seed, config.meta.size, labels)


def _maml_family(config: Config) -> meta.ProcessFamily:
    return meta.ProcessFamily(config.env_params, dict(config.runs.maml_spread))


def cmd_adapt(config: Config, store: PolicyStore, seed: int = 0, method: str = "emaml",
              rank: int | None = None, variant: str | None = None, steps: int | None = None,
              fault: Fault | None = None) -> RunRecord:
    """Inject the fault, buffer post-fault experience, re-initialize per ``method``, then PPO-train.

    All methods draw the buffer and the training rollouts from the same
    seeded streams, so paired runs differ only in the starting parameters.
    """
    errors = []
    if method not in METHODS:
        errors.append(f"method must be one of {METHODS}, got {method!r}")
    rank = config.meta.rank if rank is None else int(rank)
    variant = variant or config.meta.variant
    if variant not in meta.VARIANTS:
        errors.append(f"variant must be one of {meta.VARIANTS}, got {variant!r}")
    if rank < 0 or rank > config.meta.size:
        errors.append(f"rank ({rank}) must be between 0 and the complement size ({config.meta.size})")
    if errors:
        raise ConfigError(errors)
    fault = fault or config.adapt_fault
    steps = int(steps or config.runs.adapt_steps)
    mcfg = meta.MetaConfig(**{**asdict(config.meta), "rank": rank, "variant": variant})
    run_id = adapt_run_id(method, fault.label, seed, rank, variant)

    theta0, theta_v0 = _load_nominal(store, seed)
    complement = None
    if method == "emaml":
        complement = store.load_curated_complement(complement_name(seed))
        if rank > len(complement):
            raise ConfigError([f"rank ({rank}) exceeds the stored complement of {len(complement)}"])
        if complement.entries and complement.entries[0].theta.spec != theta0.spec:
            raise ConfigError(["complement and nominal controller use different network specs"])
    if run_id in store.read_manifest()["runs"]:
        raise ConfigError([f"run {run_id!r} already exists in {store.path}"])

    env = config.make_env(fault)
    memory = ppo.collect(env, theta0, mcfg.memory_size, rng_for(seed, "adapt", fault.label, "buffer"))
    extra = {"buffer_steps": len(memory), "buffer_reward": float(memory.rewards.sum()),
             "meta_env_steps": 0, "rank": rank, "variant": variant}
    theta = theta0
    if method == "emaml":
        trace = meta.MetaTrace()
        theta = meta.emaml_meta_update(theta0, memory, complement, mcfg, theta_v0, trace)
        order = {label: i + 1 for i, label in enumerate(trace.selected)}
        ranked = sorted(trace.scores, key=lambda kv: -kv[1])
        extra["scores"] = [{"label": l, "score": s, "rank": order.get(l)} for l, s in ranked]
        extra["selected"] = list(trace.selected)
        extra["update_norms"] = trace.deltas
        extra["meta_status"] = trace.status
    elif method == "maml":
        family_rng = rng_for(seed, "adapt", "maml-family")
        theta = meta.maml_train(theta0, _maml_family(config), mcfg,
                                lambda p: envs.make_env(config.env_kind, p), family_rng)
        extra["meta_env_steps"] = mcfg.k_out * mcfg.tasks * (mcfg.k_in + 1) * mcfg.task_steps
    if not theta.is_finite():
        raise FloatingPointError(f"{method} re-initialization produced non-finite parameters")
    result = ppo.ppo_train(env, theta, theta_v0, config.ppo, steps,
                           rng_for(seed, "adapt", fault.label, "train"), config.runs.wall_clock)
    pid = run_id
    store.save_policy(result.theta, {"label": pid, "fault_label": fault.label, "seed": seed,
                                     "method": method, "trained_steps": result.steps}, pid)
    extra["updates"] = result.updates
    record = _record(config, run_id, env.params, fault.label, seed, method, result,
                     str(store.policy_file(pid).relative_to(store.path)), extra)
    return store.save_run(record, _csv(config, result))


# -- reports ------------------------------------------------------------------------------

def _read_curve(text: str):
    steps, totals = [], []
    running = 0.0
    for row in csv.DictReader(io.StringIO(text)):
        running += float(row["cumulative_reward"])
        steps.append(int(row["step"]))
        totals.append(running)
    return steps, totals


def cmd_report(store: PolicyStore, run_ids) -> str:
    """Per-step running reward totals of each run on a shared step grid.

    A run's total is updated at each episode end and carried forward in
    between. Runs that end before the last grid step are padded with their
    final total and marked ``[padded]`` in the header. With two or more runs
    the seed mean and sample standard deviation are appended.
    """
    run_ids = list(run_ids)
    if not run_ids:
        raise ValueError("report needs at least one run id")
    manifest = store.read_manifest()
    missing = [r for r in run_ids if r not in manifest["runs"]]
    if missing:
        raise MissingRecordError("run", missing)
    curves = [_read_curve(store.read_rewards(r)) for r in run_ids]
    grid = sorted({s for steps, _ in curves for s in steps})
    last = grid[-1] if grid else 0
    header = ["step"]
    for rid, (steps, _) in zip(run_ids, curves):
        header.append(rid + ("[padded]" if not steps or steps[-1] < last else ""))
    many = len(run_ids) > 1
    if many:
        header += ["mean", "spread"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    cols = []
    for steps, totals in curves:
        idx = np.searchsorted(np.asarray(steps, dtype=np.int64), grid, side="right") - 1
        vals = np.where(idx >= 0, np.asarray([0.0] + totals)[idx + 1], 0.0)
        cols.append(vals)
    table = np.array(cols).T if cols and grid else np.zeros((0, len(run_ids)))
    for step, row in zip(grid, table):
        out = [step] + [repr(float(v)) for v in row]
        if many:
            out += [repr(float(np.mean(row))), repr(float(np.std(row, ddof=1)))]
        w.writerow(out)
    return buf.getvalue()


def total_reward(store: PolicyStore, run_id: str) -> float:
    return store.load_run(run_id).total_reward
