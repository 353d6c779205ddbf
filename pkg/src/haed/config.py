"""Experiment configuration: strict JSON parsing, defaults, resolved snapshots."""

import copy
import hashlib
import json

from .data import BatchSpec, HierarchyConfig
from .errors import ConfigError, UnknownKey
from .model import DecoderConfig, EncoderConfig, MainConfig, ModelConfig

# Schema and defaults. None means "resolved later from context".
DEFAULTS = {
    "dataset": {
        "kind": "text",          # "text" | "image"
        "path": None,
        "hierarchy": {"mode": None, "k": 12},  # mode defaults by dataset kind
    },
    "model": {
        "embed_dim": 10,
        "encoder": {"kind": "mlp", "mlp_hidden": [256, 256], "rnn_units": 1024},
        "main": {"kind": "transformer", "layers": 6, "dim": 356, "ff_dim": 1424,
                 "heads": None, "head_dim": 32, "max_positions": 100, "rnn_units": 1500},
        "decoder": {"units": None},
    },
    "objective": {"kind": "e2e", "extra_negative_batches": 3},
    "optimizer": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8, "weight_decay": 0.0,
                  "lr_enc_dec": 0.002, "lr_main": None, "clip_norm": 0.01},
    "schedule": {"warmup_steps": None, "floor_frac": 0.05},
    "batch": {"segments_per_batch": 256, "docs_per_batch": 32},
    "run": {"steps": None, "eval_every": 100, "seed": 0, "out_dir": "runs/default"},
}


def _merge(defaults, user, path=""):
    out = copy.deepcopy(defaults)
    if not isinstance(user, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object, got {type(user).__name__}")
    for key, val in user.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise UnknownKey(here)
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], val, here)
        else:
            out[key] = val
    return out


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def resolve(user: dict) -> dict:
    """Merge user config over defaults and fill the context-dependent ones."""
    cfg = _merge(DEFAULTS, user)

    ds = cfg["dataset"]
    _require(ds["kind"] in ("text", "image"), f"dataset.kind: unknown kind {ds['kind']!r}")
    if ds["hierarchy"]["mode"] is None:
        ds["hierarchy"]["mode"] = "word" if ds["kind"] == "text" else "fixed_k"
    _require(ds["hierarchy"]["mode"] in ("word", "fixed_k"),
             f"dataset.hierarchy.mode: unknown mode {ds['hierarchy']['mode']!r}")
    _require(ds["hierarchy"]["k"] >= 1, "dataset.hierarchy.k: must be >= 1")
    _require(not (ds["hierarchy"]["mode"] == "word" and ds["kind"] == "image"),
             "dataset.hierarchy.mode: word mode only valid for text")

    obj = cfg["objective"]
    _require(obj["kind"] in ("e2e", "iem"), f"objective.kind: unknown kind {obj['kind']!r}")
    _require(obj["extra_negative_batches"] >= 0, "objective.extra_negative_batches: must be >= 0")

    m = cfg["model"]["main"]
    _require(m["kind"] in ("transformer", "rnn"), f"model.main.kind: unknown kind {m['kind']!r}")
    if m["heads"] is None:
        m["heads"] = 12 if obj["kind"] == "iem" else 8
    if cfg["model"]["decoder"]["units"] is None:
        cfg["model"]["decoder"]["units"] = 2000 if obj["kind"] == "iem" else 1024
    _require(cfg["model"]["decoder"]["units"] >= 1, "model.decoder.units: must be >= 1")
    _require(cfg["model"]["encoder"]["kind"] in ("mlp", "rnn"),
             f"model.encoder.kind: unknown kind {cfg['model']['encoder']['kind']!r}")

    opt = cfg["optimizer"]
    if opt["lr_main"] is None:
        opt["lr_main"] = 0.00035 if m["kind"] == "transformer" else 0.002
    _require(opt["lr_enc_dec"] > 0 and opt["lr_main"] > 0, "optimizer: learning rates must be > 0")
    _require(opt["clip_norm"] > 0, "optimizer.clip_norm: must be > 0")

    if cfg["schedule"]["warmup_steps"] is None:
        cfg["schedule"]["warmup_steps"] = 2000 if m["kind"] == "transformer" else 0
    _require(cfg["schedule"]["warmup_steps"] >= 0, "schedule.warmup_steps: must be >= 0")

    _require(cfg["run"]["eval_every"] >= 1, "run.eval_every: must be >= 1")
    return cfg


def parse_config(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        try:
            user = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return resolve(user)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def model_config(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(
        k=cfg["dataset"]["hierarchy"]["k"],
        encoder=EncoderConfig(kind=m["encoder"]["kind"],
                              mlp_hidden=tuple(m["encoder"]["mlp_hidden"]),
                              rnn_units=m["encoder"]["rnn_units"],
                              embed_dim=m["embed_dim"]),
        main=MainConfig(kind=m["main"]["kind"], layers=m["main"]["layers"],
                        dim=m["main"]["dim"], ff_dim=m["main"]["ff_dim"],
                        heads=m["main"]["heads"], head_dim=m["main"]["head_dim"],
                        max_positions=m["main"]["max_positions"],
                        rnn_units=m["main"]["rnn_units"]),
        decoder=DecoderConfig(units=m["decoder"]["units"]),
    )


def hierarchy_config(cfg: dict) -> HierarchyConfig:
    h = cfg["dataset"]["hierarchy"]
    return HierarchyConfig(mode=h["mode"], k=h["k"])


def batch_spec(cfg: dict) -> BatchSpec:
    if cfg["dataset"]["kind"] == "image":
        return BatchSpec(docs_per_batch=cfg["batch"]["docs_per_batch"])
    return BatchSpec(segments_per_batch=cfg["batch"]["segments_per_batch"])
