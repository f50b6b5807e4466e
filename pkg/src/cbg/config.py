"""Sectioned experiment configuration with typed validation.

Config files use INI syntax::

    [experiment]
    task = 1
    samples = 2000
    seed = 0
    output = results/run.csv

    [sampler]
    method = cbg_gf
    num_steps = 100
    K = 1000

    [sweep]
    num_steps = 10, 100
    K = 10, 100, 1000

Command-line overrides use ``section.key=value``.  Validation collects every
problem before raising, so one error message lists all offending fields.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ._validation import ContractError
from .guidance import METHODS, TEMPER_MODES


class ConfigError(ContractError):
    """Invalid configuration; ``problems`` lists ``(field, message)`` pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(f"{k}: {m}" for k, m in self.problems))


def _int_list(text):
    return [int(float(v)) for v in _split(text)]


def _float_list(text):
    return [float(v) for v in _split(text)]


def _str_list(text):
    return [v for v in _split(text)]


def _split(text):
    if isinstance(text, (list, tuple)):
        return list(text)
    return [p.strip() for p in str(text).replace(";", ",").split(",") if p.strip()]


def _optional_int(text):
    if text is None or str(text).strip().lower() in ("", "none", "exact"):
        return None
    return int(text)


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"{text!r} is not an integer")
    return int(value)


# field name -> (section, parser)
_SCHEMA = {
    "task": ("experiment", _int),
    "task_seed": ("experiment", _int),
    "samples": ("experiment", _int),
    "seed": ("experiment", _int),
    "reference_seed": ("experiment", _int),
    "output": ("experiment", str),
    "method": ("sampler", str),
    "num_steps": ("sampler", _int),
    "K": ("sampler", _int),
    "gamma": ("sampler", float),
    "C": ("sampler", float),
    "temper_mode": ("sampler", str),
    "inner_steps": ("sampler", _optional_int),
    "chunk_size": ("sampler", _int),
    "folds": ("evaluation", _int),
    "sweep_tasks": ("sweep", _int_list),
    "sweep_methods": ("sweep", _str_list),
    "sweep_num_steps": ("sweep", _int_list),
    "sweep_K": ("sweep", _int_list),
    "sweep_gamma": ("sweep", _float_list),
    "sweep_C": ("sweep", _float_list),
    "budget": ("sweep", float),
}

# keys as written inside [sweep]
_SWEEP_KEYS = {"tasks": "sweep_tasks", "methods": "sweep_methods", "num_steps": "sweep_num_steps",
               "K": "sweep_K", "gamma": "sweep_gamma", "C": "sweep_C", "budget": "budget"}


def gamma_grid():
    """The ten log-spaced guidance scales ``10^(-3 + 2k/3)``, 0.001 to 1000."""
    return [float(f"{10 ** (-3 + 2 * k / 3):.6g}") for k in range(10)]


@dataclass
class ExperimentConfig:
    task: int = 1
    task_seed: int = 0
    samples: int = 2000
    seed: int = 0
    reference_seed: int = 1
    output: str = "results/run.csv"
    method: str = "cbg_gf"
    num_steps: int = 100
    K: int = 1000
    gamma: float = 1.0
    C: float = 1.0
    temper_mode: str = "inside_integral"
    inner_steps: int | None = None
    chunk_size: int = 250
    folds: int = 5
    sweep_tasks: list = field(default_factory=lambda: [1])
    sweep_methods: list = field(default_factory=lambda: list(METHODS))
    sweep_num_steps: list = field(default_factory=lambda: [10, 100])
    sweep_K: list = field(default_factory=lambda: [10, 100, 1000])
    sweep_gamma: list = field(default_factory=gamma_grid)
    sweep_C: list = field(default_factory=lambda: [0.1, 1.0, 10.0])
    budget: float = 1e5

    def validate(self):
        problems = []

        def need(cond, name, msg):
            if not cond:
                problems.append((name, msg))

        need(self.task in (1, 2, 3, 4, 5), "task", f"must be 1..5, got {self.task!r}")
        need(self.samples >= 1, "samples", f"must be >= 1, got {self.samples!r}")
        need(self.method in METHODS, "method", f"must be one of {', '.join(METHODS)}, got {self.method!r}")
        need(self.num_steps >= 1, "num_steps", f"must be >= 1, got {self.num_steps!r}")
        need(self.K >= 1, "K", f"must be >= 1, got {self.K!r}")
        need(self.method != "dpg" or self.K >= 2, "K", "dpg needs K >= 2")
        need(self.gamma >= 0 and self.gamma < float("inf"), "gamma", f"must be finite and >= 0, got {self.gamma!r}")
        need(self.C >= 0 and self.C < float("inf"), "C", f"must be finite and >= 0, got {self.C!r}")
        need(self.temper_mode in TEMPER_MODES, "temper_mode", f"must be one of {', '.join(TEMPER_MODES)}")
        need(self.inner_steps is None or self.inner_steps >= 1, "inner_steps", "must be empty or >= 1")
        need(self.chunk_size >= 1, "chunk_size", f"must be >= 1, got {self.chunk_size!r}")
        need(self.folds >= 2, "folds", f"must be >= 2, got {self.folds!r}")
        need(self.samples >= self.folds, "samples", "must be at least the number of folds")
        need(bool(self.output), "output", "must be a path")
        need(all(t in (1, 2, 3, 4, 5) for t in self.sweep_tasks) and self.sweep_tasks, "sweep.tasks", "must list ids in 1..5")
        bad_methods = [m for m in self.sweep_methods if m not in METHODS]
        need(not bad_methods and self.sweep_methods, "sweep.methods", f"unknown methods {bad_methods}")
        need(all(v >= 1 for v in self.sweep_num_steps) and self.sweep_num_steps, "sweep.num_steps", "values must be >= 1")
        need(all(v >= 1 for v in self.sweep_K) and self.sweep_K, "sweep.K", "values must be >= 1")
        need(all(v >= 0 for v in self.sweep_gamma) and self.sweep_gamma, "sweep.gamma", "values must be >= 0")
        need(all(v >= 0 for v in self.sweep_C) and self.sweep_C, "sweep.C", "values must be >= 0")
        need(self.budget >= 1, "budget", "must be >= 1")
        if problems:
            raise ConfigError(problems)
        return self

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        data = {**self.to_dict(), **changes}
        return ExperimentConfig(**data)


def _assign(values, problems, name, raw):
    section, parse = _SCHEMA[name]
    try:
        values[name] = parse(raw)
    except (TypeError, ValueError) as exc:
        problems.append((name, f"cannot parse {raw!r}: {exc}"))


def _key_to_field(section, key):
    if section == "sweep":
        return _SWEEP_KEYS.get(key)
    if key in _SCHEMA and _SCHEMA[key][0] == section:
        return key
    return None


def load_config(path=None, overrides=(), **direct):
    """Build a validated :class:`ExperimentConfig`.

    Precedence, lowest first: defaults, the INI file at ``path``,
    ``section.key=value`` strings in ``overrides``, then keyword arguments
    (already typed) in ``direct`` whose value is not ``None``.
    """
    values, problems = {}, []
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keys are case sensitive (K vs k)
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError([("config", f"cannot read {path}: {exc.strerror or exc}")]) from exc
        try:
            parser.read_string(text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError([("config", str(exc).splitlines()[0])]) from exc
        for section in parser.sections():
            for key, raw in parser.items(section):
                name = _key_to_field(section, key)
                if name is None:
                    problems.append((f"{section}.{key}", "unknown setting"))
                else:
                    _assign(values, problems, name, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            problems.append((item, "override must look like section.key=value"))
            continue
        lhs, raw = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        name = _key_to_field(section.strip(), key.strip())
        if name is None:
            problems.append((lhs.strip(), "unknown setting"))
        else:
            _assign(values, problems, name, raw.strip())
    for name, value in direct.items():
        if value is None:
            continue
        if name not in {f.name for f in fields(ExperimentConfig)}:
            problems.append((name, "unknown setting"))
        else:
            values[name] = value
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(**values).validate()


def dump_config(cfg):
    """Render ``cfg`` back to INI text (round-trips through :func:`load_config`)."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    data = cfg.to_dict()
    reverse_sweep = {v: k for k, v in _SWEEP_KEYS.items()}
    for name, (section, _) in _SCHEMA.items():
        if not parser.has_section(section):
            parser.add_section(section)
        value = data[name]
        key = reverse_sweep.get(name, name) if section == "sweep" else name
        if isinstance(value, list):
            text = ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif value is None:
            text = "none"
        else:
            text = repr(value) if isinstance(value, float) else str(value)
        parser.set(section, key, text)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
