"""Python access to the equireg C++ core.

Dictionaries are serialised to JSON before crossing into C++, so every
function takes plain Python data and NumPy arrays.
"""

import json

import numpy as np

from . import _core
from ._core import ConfigError, IoError, NumericError, ShapeError, __version__

__all__ = [
    "ConfigError", "IoError", "NumericError", "ShapeError", "__version__",
    "step_subsequence", "linear_schedule", "generate_dataset", "operator_apply",
    "operator_adjoint", "operator_matrix", "group_apply", "group_size",
    "posterior_exact", "sample_gmm", "psnr", "ssim", "sliced_wasserstein",
    "diversity", "sample_posterior", "run_experiment", "cmd_run",
]


def _j(obj):
    return json.dumps(obj)


def step_subsequence(total_steps, n):
    return _core.step_subsequence(total_steps, n)


def linear_schedule(steps, beta_min=1e-4, beta_max=0.02):
    """alpha_bar for t = 0..steps."""
    return np.asarray(_core.linear_schedule(steps, beta_min, beta_max))


def generate_dataset(spec):
    items, metadata = _core.generate_dataset(_j(spec))
    return items, json.loads(metadata)


def operator_apply(spec, x):
    return _core.operator_apply(_j(spec), np.asarray(x, dtype=float))


def operator_adjoint(spec, input_shape, y):
    return _core.operator_adjoint(_j(spec), list(input_shape), np.asarray(y, dtype=float))


def operator_matrix(spec, input_shape):
    return _core.operator_matrix(_j(spec), list(input_shape))


def group_apply(config, g, x):
    return _core.group_apply(_j(config), g, np.asarray(x, dtype=float))


def group_size(config, shape):
    return _core.group_size(_j(config), list(shape))


def posterior_exact(prior, a, sigma_y, y):
    return json.loads(_core.posterior_exact(_j(prior), np.asarray(a, dtype=float), sigma_y,
                                            np.asarray(y, dtype=float)))


def sample_gmm(prior, n, seed=0):
    return _core.sample_gmm(_j(prior), n, seed)


def psnr(x, ref, peak=1.0):
    return _core.psnr(np.asarray(x, dtype=float), np.asarray(ref, dtype=float), peak)


def ssim(x, ref, peak=1.0):
    return _core.ssim(np.asarray(x, dtype=float), np.asarray(ref, dtype=float), peak)


def sliced_wasserstein(a, b, n_proj=64, seed=0):
    return _core.sliced_wasserstein(np.asarray(a, dtype=float), np.asarray(b, dtype=float), n_proj, seed)


def diversity(samples):
    return _core.diversity([np.asarray(s, dtype=float) for s in samples])


def sample_posterior(prior, sampler, op, y, schedule=(1000, 1e-4, 0.02)):
    """Run an unregularised pixel sampler against the analytic score of `prior`."""
    sample, summary = _core.sample_posterior(_j(prior), schedule[0], schedule[1], schedule[2],
                                             _j(sampler), _j(op), np.asarray(y, dtype=float))
    return sample, json.loads(summary)


def run_experiment(config, threads=1):
    """Prepare in memory and run every sweep cell; returns the sweep CSV text."""
    return _core.run_experiment(_j(config), threads)


def cmd_run(config, threads=1):
    """The `run` verb; returns the report hash from the manifest."""
    return _core.cmd_run(_j(config), threads)
