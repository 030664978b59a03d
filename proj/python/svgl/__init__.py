from ._svgl import (
    ConfigError,
    ContractError,
    Error,
    FormatError,
    MixtureSpec,
    NumericError,
    ShapeError,
    UsageError,
    command_names,
    dispersion_score,
    gen_shapes,
    interpolate_slerp,
    linear_probe,
    make_mixture,
    mc_velocity,
    mmd,
    oracle_sample,
    oracle_velocity,
    psnr,
    sample_mixture,
    sliced_wasserstein,
    time_grid,
)
from ._svgl import run_command as _run_command

import json as _json


def run_command(command, config=None):
    return _json.loads(_run_command(command, _json.dumps(config or {})))


__all__ = [name for name in dir() if not name.startswith("_")]
