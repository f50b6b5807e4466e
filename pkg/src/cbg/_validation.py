"""Input validation and random-state helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its documented domain."""


class NonFiniteStateError(FloatingPointError):
    """Raised when a sampler produces a non-finite state or score.

    The offending time and state are attached so callers can report them.
    """

    def __init__(self, message, t=None, x_t=None):
        super().__init__(message)
        self.t = t
        self.x_t = x_t


def as_generator(random_state=None):
    """Return a counter-based ``numpy.random.Generator``.

    Integers and ``SeedSequence`` objects are turned into a Philox stream;
    generators pass through untouched so callers can thread one handle
    through a whole computation.
    """
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (numbers.Integral, np.random.SeedSequence)):
        return np.random.Generator(np.random.Philox(random_state))
    raise TypeError(f"cannot build a generator from {type(random_state).__name__}")


def spawn_generators(seed, n):
    """Independent Philox streams keyed by (seed, index).

    Stream ``i`` depends only on ``seed`` and ``i``, never on ``n``, so a batch
    split across workers reproduces the serial result exactly.
    """
    root = np.random.SeedSequence(seed)
    return [
        np.random.Generator(np.random.Philox(np.random.SeedSequence(root.entropy, spawn_key=(i,))))
        for i in range(n)
    ]


def check_time(t, *, low=0.0, high=1.0, closed_low=True, closed_high=True, name="t"):
    t = float(t)
    ok_low = t >= low if closed_low else t > low
    ok_high = t <= high if closed_high else t < high
    if not (ok_low and ok_high and np.isfinite(t)):
        lb = "[" if closed_low else "("
        rb = "]" if closed_high else ")"
        raise ContractError(f"{name}={t!r} outside {lb}{low}, {high}{rb}")
    return t


def check_state(x, *, name="x_t", allow_nonfinite=False):
    """Coerce a state to a float array of shape (d,) or (n, d)."""
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2):
        raise ContractError(f"{name} must be 1-D or 2-D, got shape {x.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(x)):
        raise ContractError(f"{name} has non-finite entries")
    return x


def check_positive_int(value, name, minimum=1):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < minimum:
        raise ContractError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_samples(samples, name="samples"):
    """2-D finite sample matrix with at least one row."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise ContractError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite entries")
    return arr
