"""Run configuration and the stages behind the command-line interface.

Every stage reads its inputs from, and records its outputs in, a
``manifest.json`` at the root of the output directory. Artifacts are written
under ``dataset/``, ``selection/``, ``reward/`` and ``eval/`` with the first
12 hex digits of their SHA-256 in the file name, so two runs with the same
config produce the same tree byte for byte.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .core import Dataset, dumps_dataset, fit_normalization, load_dataset
from .envlab import (
    CEMPolicyLearner,
    Policy,
    PolicyLearnerConfig,
    UniformRandomPolicy,
    builtin_envs,
    collect_rollouts,
    learn_policy,
    make_env,
)
from .features import CandidateSet
from .maxent import IrlConfig, RewardModel, run_irl
from .metrics import evaluate, return_pairs, return_pairs_csv, sliced_wasserstein
from .selection import PseudoLabelSelector, ranking_csv

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
HASH_LEN = 12


class ConfigError(ValueError):
    """Invalid configuration or command-line input (exit code 1)."""


DEFAULTS: dict = {
    "env": "PointMass1D",
    "env_kwargs": {},
    "seed": 0,
    "workers": 1,
    "out": "run",
    "expert": {
        "path": None,
        "heldout_path": None,
        "nonexpert_path": None,
        "n_trajectories": 150,
        "heldout_trajectories": 150,
        "nonexpert_trajectories": 45,
        "nonexpert_random_fraction": 1 / 3,
        "expert_generations": 100,
        "expert_population": 64,
        "nonexpert_generations": 2,
    },
    "selection": {
        "max_degree": 3,
        "k": 12,
        "folds": 5,
        "augment_fraction": 0.3,
        "bandwidth": "scott",
        "density_floor": 1e-300,
    },
    "irl": {
        "iterations": 50,
        "learning_rate": 2e-3,
        "lr_decay": 0.99,
        "rollouts_per_iter": 20,
        "optimizer": "sgd",
        "warm_start": False,
        "max_step_norm": None,
    },
    "policy": {
        "discount": 0.99,
        "generations": 30,
        "population": 32,
        "elite_frac": 0.25,
        "init_std": 2.0,
        "min_std": 0.05,
        "episodes": 20,
    },
    "evaluation": {
        "episodes": 20,
        "projections": 128,
    },
}

_pos_int = {"type": "integer", "minimum": 1}
_path = {"type": ["string", "null"]}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "transparent-reward run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "env": {"type": "string", "enum": sorted(builtin_envs())},
        "env_kwargs": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "workers": _pos_int,
        "out": {"type": "string", "minLength": 1},
        "expert": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": _path,
                "heldout_path": _path,
                "nonexpert_path": _path,
                "n_trajectories": _pos_int,
                "heldout_trajectories": _pos_int,
                "nonexpert_trajectories": {"type": "integer", "minimum": 0},
                "nonexpert_random_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                "expert_generations": {"type": "integer", "minimum": 0},
                "expert_population": {"type": "integer", "minimum": 2},
                "nonexpert_generations": {"type": "integer", "minimum": 0},
            },
        },
        "selection": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_degree": {"type": "integer", "minimum": 1, "maximum": 3},
                "k": _pos_int,
                "folds": {"type": "integer", "minimum": 2},
                "augment_fraction": {"type": "number", "minimum": 0},
                "bandwidth": {"oneOf": [{"const": "scott"}, {"type": "number", "exclusiveMinimum": 0}]},
                "density_floor": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "irl": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "iterations": _pos_int,
                "learning_rate": {"type": "number", "minimum": 0},
                "lr_decay": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "rollouts_per_iter": _pos_int,
                "optimizer": {"enum": ["sgd", "adam"]},
                "warm_start": {"type": "boolean"},
                "max_step_norm": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "discount": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "generations": {"type": "integer", "minimum": 0},
                "population": {"type": "integer", "minimum": 2},
                "elite_frac": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "init_std": {"type": "number", "exclusiveMinimum": 0},
                "min_std": {"type": "number", "minimum": 0},
                "episodes": _pos_int,
            },
        },
        "evaluation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"episodes": {"type": "integer", "minimum": 2}, "projections": _pos_int},
        },
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass(frozen=True)
class RunConfig:
    """Validated, defaults-filled configuration; ``data`` mirrors :data:`DEFAULTS`."""

    data: dict

    @classmethod
    def from_dict(cls, overrides: dict | None = None) -> "RunConfig":
        overrides = overrides or {}
        try:
            jsonschema.validate(overrides, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        merged = _merge(DEFAULTS, overrides)
        jsonschema.validate(merged, SCHEMA)
        cfg = cls(merged)
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        data = {}
        if path is not None:
            try:
                data = json.loads(Path(path).read_text())
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def _check(self):
        try:
            make_env(self.env, **self.data["env_kwargs"])
        except TypeError as exc:
            raise ConfigError(f"bad env_kwargs for {self.env}: {exc}") from None
        for key in ("path", "heldout_path", "nonexpert_path"):
            p = self.data["expert"][key]
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"expert.{key} does not exist: {p}")

    def __getitem__(self, key):
        return self.data[key]

    @property
    def env(self) -> str:
        return self.data["env"]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def out(self) -> Path:
        return Path(self.data["out"])

    def make_env(self):
        return make_env(self.env, **self.data["env_kwargs"])

    def irl_config(self) -> IrlConfig:
        return IrlConfig(seed=self.stage_seed("irl"), **self.data["irl"])

    def policy_config(self, seed) -> PolicyLearnerConfig:
        return PolicyLearnerConfig(seed=seed, **self.data["policy"])

    def stage_seed(self, stage: str) -> int:
        return stage_seed(self.seed, stage)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


_STAGES = ("expert_policy", "expert", "heldout", "nonexpert_policy", "nonexpert", "random",
           "selection", "irl", "evaluation", "relearn")


def stage_seed(master: int, stage: str) -> int:
    """Independent 32-bit seed for ``stage`` derived from the master seed."""
    ss = np.random.SeedSequence(master, spawn_key=(_STAGES.index(stage),))
    return int(ss.generate_state(1)[0])


# Artifact store --------------------------------------------------------------


def content_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:HASH_LEN]


class Workspace:
    """Output directory with a manifest of logical name -> relative file."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest_path = self.root / MANIFEST
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
        else:
            self.manifest = {"artifacts": {}}

    def write(self, logical: str, subdir: str, stem: str, suffix: str, text: str) -> Path:
        rel = Path(subdir) / f"{stem}-{content_hash(text)}{suffix}"
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.manifest["artifacts"][logical] = rel.as_posix()
        self._save()
        return path

    def record_config(self, cfg: RunConfig):
        # location and parallelism do not affect results, so they stay out of the record
        self.manifest["config"] = {k: v for k, v in cfg.data.items() if k not in ("out", "workers")}
        self._save()

    def _save(self):
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")

    def path(self, logical: str) -> Path:
        try:
            return self.root / self.manifest["artifacts"][logical]
        except KeyError:
            raise ConfigError(f"{self.root}: no '{logical}' artifact yet; run the earlier stage first") from None

    def has(self, logical: str) -> bool:
        return logical in self.manifest["artifacts"]

    def read(self, logical: str) -> str:
        return self.path(logical).read_text()


def _dataset_or_none(path):
    return None if path is None else load_dataset(path)


# Stages ------------------------------------------------------------------------


def generate_expert(cfg: RunConfig, ws: Workspace) -> dict:
    """Train a ground-truth policy and write expert, held-out and non-expert data."""
    env = cfg.make_env()
    ex = cfg["expert"]
    ws.record_config(cfg)
    pcfg = PolicyLearnerConfig(**{**cfg["policy"], "generations": ex["expert_generations"],
                                  "population": ex["expert_population"]},
                               seed=cfg.stage_seed("expert_policy"))
    log.info("training ground-truth policy on %s", env.name)
    expert_policy = learn_policy(env, env.ground_truth_reward, pcfg)
    expert = collect_rollouts(expert_policy, env, ex["n_trajectories"], cfg.stage_seed("expert"), name="expert")
    heldout = collect_rollouts(expert_policy, env, ex["heldout_trajectories"], cfg.stage_seed("heldout"),
                               name="heldout")
    nonexpert = _nonexpert(cfg, env)
    out = {
        "expert_policy": ws.write("expert_policy", "dataset", "expert-policy", ".json", expert_policy.to_json() + "\n"),
        "expert": ws.write("expert", "dataset", "expert", ".jsonl", dumps_dataset(expert)),
        "heldout": ws.write("heldout", "dataset", "heldout", ".jsonl", dumps_dataset(heldout)),
    }
    if nonexpert is not None:
        out["nonexpert"] = ws.write("nonexpert", "dataset", "nonexpert", ".jsonl", dumps_dataset(nonexpert))
    return out


def _nonexpert(cfg: RunConfig, env) -> Dataset | None:
    ex = cfg["expert"]
    total = ex["nonexpert_trajectories"]
    if total == 0:
        return None
    n_random = int(round(ex["nonexpert_random_fraction"] * total))
    n_short = total - n_random
    trajs = []
    if n_short:
        short = learn_policy(env, env.ground_truth_reward,
                             PolicyLearnerConfig(**{**cfg["policy"], "generations": ex["nonexpert_generations"]},
                                                 seed=cfg.stage_seed("nonexpert_policy")))
        trajs += collect_rollouts(short, env, n_short, cfg.stage_seed("nonexpert")).trajectories
    if n_random:
        rand = UniformRandomPolicy(env.action_dim, env.action_low, env.action_high)
        trajs += collect_rollouts(rand, env, n_random, cfg.stage_seed("random")).trajectories
    return Dataset(tuple(trajs), env.state_dim, name="nonexpert", source=f"{env.name} short-budget and random")


def _expert_inputs(cfg: RunConfig, ws: Workspace):
    ex = cfg["expert"]
    if ex["path"] is not None:
        expert = load_dataset(ex["path"])
        heldout = _dataset_or_none(ex["heldout_path"]) or expert
        return expert, heldout, _dataset_or_none(ex["nonexpert_path"])
    if not ws.has("expert"):
        generate_expert(cfg, ws)
    nonexpert = load_dataset(ws.path("nonexpert")) if ws.has("nonexpert") else None
    return load_dataset(ws.path("expert")), load_dataset(ws.path("heldout")), nonexpert


def _check_env_dim(cfg: RunConfig, data: Dataset):
    env = cfg.make_env()
    if data.state_dim != env.state_dim:
        raise ConfigError(f"dataset has d={data.state_dim} but {env.name} has d={env.state_dim}")


def select(cfg: RunConfig, ws: Workspace) -> dict:
    """Rank candidate monomials and write the ranking CSV and selected set."""
    ws.record_config(cfg)
    expert, _, nonexpert = _expert_inputs(cfg, ws)
    _check_env_dim(cfg, expert)
    sc = cfg["selection"]
    sel = PseudoLabelSelector(k=sc["k"], max_degree=sc["max_degree"], folds=sc["folds"],
                              augment_fraction=sc["augment_fraction"], bandwidth=sc["bandwidth"],
                              density_floor=sc["density_floor"], random_state=cfg.stage_seed("selection"),
                              workers=cfg["workers"])
    sel.fit(expert, nonexpert=nonexpert)
    if sel.k > len(sel.candidates_):
        log.warning("k=%d exceeds the %d candidates; keeping all", sel.k, len(sel.candidates_))
    return {
        "ranking": ws.write("ranking", "selection", "ranking", ".csv", ranking_csv(sel.ranking_, sel.candidates_)),
        "selected": ws.write("selected", "selection", "selected", ".json", sel.selected_.to_json() + "\n"),
    }


def irl(cfg: RunConfig, ws: Workspace) -> dict:
    """Fit reward weights, then write the model, trace, policy and evaluation."""
    ws.record_config(cfg)
    expert, heldout, _ = _expert_inputs(cfg, ws)
    _check_env_dim(cfg, expert)
    if not ws.has("selected"):
        select(cfg, ws)
    features = CandidateSet.from_json(ws.read("selected"))
    env = cfg.make_env()
    stats = fit_normalization(expert)
    projections = cfg["evaluation"]["projections"]
    div_seed = cfg.stage_seed("evaluation")
    learner = CEMPolicyLearner(cfg.policy_config(cfg.stage_seed("irl")))
    model, policy, trace = run_irl(expert, features, env, learner, cfg.irl_config(), stats=stats,
                                   divergence=lambda a, b: sliced_wasserstein(a, b, projections, div_seed))
    out = {
        "reward": ws.write("reward", "reward", "reward", ".json", model.to_json() + "\n"),
        "trace": ws.write("trace", "reward", "trace", ".csv", trace.to_csv()),
        "policy": ws.write("policy", "reward", "policy", ".json", policy.to_json() + "\n"),
    }
    out.update(_evaluate(cfg, ws, model, policy, heldout))
    return out


def _evaluate(cfg: RunConfig, ws: Workspace, model: RewardModel, policy: Policy, heldout: Dataset,
              prefix: str = "") -> dict:
    env = cfg.make_env()
    ev = cfg["evaluation"]
    report = evaluate(model, policy, env, heldout, episodes=ev["episodes"], seed=cfg.stage_seed("evaluation"),
                      projections=ev["projections"])
    pairs = return_pairs(model, env, heldout)
    return {
        prefix + "report": ws.write(prefix + "report", "eval", prefix + "report", ".json", report.to_json() + "\n"),
        prefix + "returns": ws.write(prefix + "returns", "eval", prefix + "returns", ".csv", return_pairs_csv(pairs)),
    }


def evaluate_stage(cfg: RunConfig, ws: Workspace, model_path=None, relearn: bool = False) -> dict:
    """Evaluate a reward model, optionally re-learning its policy from scratch."""
    _, heldout, _ = _expert_inputs(cfg, ws)
    model = RewardModel.from_json(Path(model_path).read_text()) if model_path else RewardModel.from_json(
        ws.read("reward"))
    if model.d != cfg.make_env().state_dim:
        raise ConfigError("reward model and environment disagree on state dimension")
    prefix = ""
    if relearn or model_path:
        policy = learn_policy(cfg.make_env(), model, cfg.policy_config(cfg.stage_seed("relearn")))
        prefix = "relearned-"
        ws.write(prefix + "policy", "eval", prefix + "policy", ".json", policy.to_json() + "\n")
    else:
        policy = Policy.from_json(ws.read("policy"))
    return _evaluate(cfg, ws, model, policy, heldout, prefix)


def amend(model_path, term, factor: float, out_dir=None) -> Path:
    """Scale one term's weight and write the amended model next to the original.

    ``term`` is an index or a term name such as ``"z1^2"``.
    """
    try:
        model = RewardModel.from_json(Path(model_path).read_text())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"cannot read reward model {model_path}: {exc}") from None
    index = resolve_term(model, term)
    try:
        new = model.amend(index, float(factor))
    except IndexError as exc:
        raise ConfigError(str(exc)) from None
    text = new.to_json() + "\n"
    root = Path(out_dir) if out_dir else Path(model_path).parent
    root.mkdir(parents=True, exist_ok=True)
    path = root / f"reward-amended-{content_hash(text)}.json"
    path.write_text(text)
    return path


def resolve_term(model: RewardModel, term) -> int:
    names = model.features.names("z")
    if isinstance(term, str) and not term.lstrip("-").isdigit():
        if term not in names:
            raise ConfigError(f"no term {term!r}; model terms are {names}")
        return names.index(term)
    index = int(term)
    if not 0 <= index < len(names):
        raise ConfigError(f"term index {index} out of range 0..{len(names) - 1}")
    return index


def velocity_term(model: RewardModel, env) -> int:
    """Index of the strongest selected term that involves only velocity coordinates."""
    vel = set(env.velocity_dims)
    candidates = [i for i, f in enumerate(model.features) if f.dims and f.dims <= vel]
    if not candidates:
        raise ValueError("the reward model has no velocity-only term")
    return max(candidates, key=lambda i: (abs(model.weights[i]), -i))


def run_all(cfg: RunConfig, ws: Workspace) -> dict:
    out = {}
    if cfg["expert"]["path"] is None:
        out.update(generate_expert(cfg, ws))
    else:
        ws.record_config(cfg)
    out.update(select(cfg, ws))
    out.update(irl(cfg, ws))
    return out


__all__ = [
    "ConfigError", "DEFAULTS", "SCHEMA", "RunConfig", "Workspace", "amend", "content_hash", "evaluate_stage",
    "generate_expert", "irl", "resolve_term", "run_all", "select", "stage_seed", "velocity_term",
]
