"""Objective-perturbation noise with density proportional to exp(-gamma ||b||).

A vector with that density has a Gamma(p, 1/gamma) distributed norm and a
direction uniform on the sphere, so it is sampled in exactly that way.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError


def derive_seed(master_seed, *keys):
    """Derive a 64-bit stream seed from a master seed and integer keys.

    The rule is ``SeedSequence([master_seed, *keys])`` reduced to its first
    64-bit state word. Distinct key tuples give independent streams; the
    same tuple always gives the same seed.
    """
    entropy = [int(master_seed)] + [int(k) for k in keys]
    ss = np.random.SeedSequence(entropy)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_stream(seed):
    """Return a fresh ``numpy.random.Generator`` for ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed)))


@dataclass(frozen=True)
class NoiseSpec:
    gamma: float
    dim: int
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be finite and > 0, got {self.gamma!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"dim must be an integer >= 1, got {self.dim!r}")

    def stream(self):
        return make_stream(self.seed)


def sample_noise(spec, stream=None, size=None):
    """Draw ``b = r * u`` with ``r ~ Gamma(dim, 1/gamma)`` and ``u`` uniform on the sphere.

    Parameters
    ----------
    spec : NoiseSpec
    stream : numpy.random.Generator, optional
        Source of randomness. Defaults to a fresh stream seeded by
        ``spec.seed``.
    size : int, optional
        Number of independent draws. When given, returns an array of shape
        ``(size, dim)``; otherwise a single vector of shape ``(dim,)``.

    Notes
    -----
    The norm is drawn as ``standard_gamma(dim) / gamma`` so that, for a
    fixed stream, changing ``gamma`` rescales the draw without changing the
    random numbers consumed.
    """
    if stream is None:
        stream = spec.stream()
    shape = (spec.dim,) if size is None else (int(size), spec.dim)
    r = stream.standard_gamma(spec.dim, size=None if size is None else int(size))
    u = stream.standard_normal(shape)
    u_norm = np.linalg.norm(u, axis=-1, keepdims=True)
    # a zero Gaussian vector has probability zero; guard anyway
    u_norm = np.where(u_norm == 0.0, 1.0, u_norm)
    r = np.asarray(r, dtype=float)[..., None] if size is not None else float(r)
    return (r / spec.gamma) * (u / u_norm)


def zero_noise(dim):
    """All-zero perturbation, used for the non-private baselines."""
    if int(dim) != dim or dim < 1:
        raise ConfigError(f"dim must be an integer >= 1, got {dim!r}")
    return np.zeros(int(dim))
