"""Experiment configuration: schema validation and default resolution."""

import copy
import json
from importlib import resources

import jsonschema

DEFAULTS = {
    "disorder": {"scale": 1.0, "seed": 0, "epsilon": 0.01},
    "pt": {"burn_in": None, "seed": 0},
    "train": {
        "n_layers": 4,
        "learning_rate": 1e-4,
        "batch_size": 50,
        "n_updates": 250_000,
        "symmetrize": True,
        "seed": 0,
        "checkpoint_every": 1000,
        "clip_norm": None,
        "eval_batch": 10_000,
    },
    "analysis": {
        "bins": 81,
        "pairs": 100_000,
        "triples": 10_000,
        "tolerance": 0.02,
        "n_flow_samples": 10_000,
        "seed": 0,
    },
}


def schema():
    text = resources.files("glassflow").joinpath("schemas/experiment_config.schema.json").read_text()
    return json.loads(text)


def resolve(raw):
    """Validate ``raw`` (unknown keys are rejected) and fill in defaults."""
    jsonschema.validate(raw, schema())
    cfg = copy.deepcopy(raw)
    for section, defaults in DEFAULTS.items():
        merged = dict(defaults)
        merged.update(cfg.get(section, {}))
        cfg[section] = merged
    if cfg["pt"]["burn_in"] is None:
        cfg["pt"]["burn_in"] = 10 * cfg["disorder"]["n_spins"]
    if cfg["ladder"]["t_min"] >= cfg["ladder"]["t_max"]:
        raise ValueError("ladder t_min must be below t_max")
    return cfg


def load(path):
    with open(path) as fh:
        return resolve(json.load(fh))


def dumps(cfg):
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"
