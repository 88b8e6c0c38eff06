"""Instruction-guided visual token compressor."""

import json

from . import _core
from ._core import (
    ContractError,
    FormatError,
    IoError,
    Params,
    ShapeError,
    brute_force_attention,
    load_params,
    toy_scene,
)

__all__ = [
    "ContractError",
    "FormatError",
    "IoError",
    "Params",
    "ShapeError",
    "attention_oracle",
    "brute_force_attention",
    "certify_gradients",
    "compress",
    "compressor_flops",
    "flops_report",
    "init_params",
    "load_params",
    "normalize_config",
    "token_count",
    "toy_scene",
]


def _dump(config):
    return json.dumps(config or {})


def normalize_config(config=None):
    return json.loads(_core.normalize_config(_dump(config)))


def token_count(config=None):
    return _core.token_count(_dump(config))


def compressor_flops(config=None, instruction_tokens=1):
    return _core.compressor_flops(_dump(config), instruction_tokens)


def flops_report(cost_model, config=None):
    return json.loads(_core.flops_report(json.dumps(cost_model), _dump(config)))


def init_params(config=None, seed=0):
    return _core.init_params(_dump(config), seed)


def compress(params, views, instruction, config=None):
    """views: list of [H, W, D] arrays; instruction: [T, lang_dim] array."""
    return _core.compress(params, list(views), instruction, "" if config is None else _dump(config))


def attention_oracle(instances=50, seed=1):
    return json.loads(_core.attention_oracle(instances, seed))


def certify_gradients(config, seeds, eps=1e-5):
    return json.loads(_core.certify_gradients(_dump(config), list(seeds), eps))
