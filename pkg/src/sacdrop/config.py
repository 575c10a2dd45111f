"""Run configuration: INI-style text with named sections.

Example::

    [domain]
    shape = ellipse
    a = 1.2
    b = 1.0
    delta = 0.2

    [model]
    eps = 0.05

    [grid]
    n_theta = 128
    n_q = 64

    [time]
    dt = 0.2
    T = 100

Values can be overridden from the environment with
``SACDROP_<SECTION>_<KEY>`` (for example ``SACDROP_TIME_DT=0.1``).
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import os
import re
from dataclasses import dataclass, field, fields

import numpy as np

from .droplet import eps_upper_bound
from .errors import ParseError, ValidationError
from .geometry import ShapeSpec

ENV_PREFIX = "SACDROP_"
REQUIRED = object()


def _floats(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(float(x) for x in re.split(r"[,\s]+", text) if x)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(x)) for x in value)
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


@dataclass
class DomainConfig:
    shape: str = "disk"
    delta: float = REQUIRED
    r0: float = 1.0
    a: float = 1.0
    b: float = 1.0
    cos: tuple = ()
    sin: tuple = ()
    resolution: int = 512

    def shape_spec(self):
        return ShapeSpec(kind=self.shape, r0=self.r0, a=self.a, b=self.b,
                         cos_coeffs=tuple(self.cos), sin_coeffs=tuple(self.sin))

    def original_area(self):
        """``|Omega|`` of the unscaled domain."""
        if self.shape == "disk":
            return np.pi * self.r0**2
        if self.shape == "ellipse":
            return np.pi * self.a * self.b
        # 1/2 int R^2 dtheta for the Fourier radial function
        return np.pi * (self.r0**2 + 0.5 * sum(c * c for c in self.cos) + 0.5 * sum(s * s for s in self.sin))


@dataclass
class ModelConfig:
    eps: float = REQUIRED
    bulk_correction: bool = False


@dataclass
class GridConfig:
    n_theta: int = None
    n_q: int = None
    h_over_eps: float = None
    theta_ratio: float = 1.0
    theta_width: float = 0.5
    q_ratio: float = 1.0
    q_focus: float = 0.55
    q_width: float = 0.05


@dataclass
class TimeConfig:
    dt: float = REQUIRED
    T: float = REQUIRED
    stride: int = 1


@dataclass
class NoiseConfig:
    n_modes: int = 16
    decay: float = 2.0
    amplitude: float = 0.0


@dataclass
class InitialConfig:
    theta0: float = 0.0
    perturbation: float = 0.0
    perturbation_mode: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    out: str = "run"
    solver: str = "direct"
    neighborhood: float = None
    checkpoint_every: int = 0


@dataclass
class CompareConfig:
    reduced_stride: int = 1


@dataclass
class ExitConfig:
    replicas: int = 100
    ladder: tuple = (16.0, 4.0, 1.0)
    include_zero: bool = True
    threshold_factor: float = 10.0
    norm: str = "l2"
    calibration_T: float = None


@dataclass
class ScalingConfig:
    eps_list: tuple = (0.02, 0.03, 0.04, 0.06, 0.08)
    h_over_eps: float = 0.4
    enforce_upbound: bool = True


SECTIONS = {
    "domain": DomainConfig,
    "model": ModelConfig,
    "grid": GridConfig,
    "time": TimeConfig,
    "noise": NoiseConfig,
    "initial": InitialConfig,
    "run": RunConfig,
    "compare": CompareConfig,
    "exit": ExitConfig,
    "scalings": ScalingConfig,
}

@dataclass
class SimConfig:
    domain: DomainConfig = field(default_factory=DomainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    run: RunConfig = field(default_factory=RunConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    exit: ExitConfig = field(default_factory=ExitConfig)
    scalings: ScalingConfig = field(default_factory=ScalingConfig)
    warnings: list = field(default_factory=list, compare=False)

    def replace(self, **sections):
        """Copy with section-level updates, e.g. ``replace(noise={"amplitude": 0.1})``."""
        out = dataclasses.replace(self)
        for name, updates in sections.items():
            setattr(out, name, dataclasses.replace(getattr(self, name), **updates))
        return out

    def to_dict(self):
        return {name: {f.name: _jsonable(getattr(getattr(self, name), f.name))
                       for f in fields(SECTIONS[name])} for name in SECTIONS}


def _jsonable(v):
    if isinstance(v, tuple):
        return [float(x) for x in v]
    return v


def _field_type(cls, name):
    for f in fields(cls):
        if f.name == name:
            default = f.default
            if f.type in ("float",) or isinstance(default, float):
                return float
            if f.type in ("int",) or (isinstance(default, int) and not isinstance(default, bool)):
                return int
            if f.type in ("bool",) or isinstance(default, bool):
                return _bool
            if f.type in ("tuple",) or isinstance(default, tuple):
                return _floats
            return str
    return None


def _convert(cls, key, text):
    conv = _field_type(cls, key)
    if conv is None:
        return None, False
    text = text.strip()
    if text == "" and _default(cls, key) is None:
        return None, True
    if conv is str:
        return text, True
    return conv(text), True


def _default(cls, key):
    for f in fields(cls):
        if f.name == key:
            return f.default
    return None


def _line_index(text):
    """Map (section, key) -> 1-based line number of its definition."""
    where = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            where[(section, None)] = i
            continue
        m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)\s*[=:]", s)
        if m and section is not None:
            where[(section, m.group(1).lower())] = i
    return where


def parse(text, env=None, required=("domain.delta", "model.eps", "time.dt", "time.T")):
    """Parse configuration text into a :class:`SimConfig` (no validation).

    ``env`` maps environment variable names to values; ``SACDROP_<SECTION>_<KEY>``
    entries override the text.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        line, content = exc.errors[0] if getattr(exc, "errors", None) else (None, "")
        raise ParseError(f"cannot parse line {content.strip()!r}; expected 'key = value'", line=line) from exc
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ParseError(f"malformed configuration: {exc}", line=line) from exc
    lines = _line_index(text)
    values = {name: {} for name in SECTIONS}
    for section in cp.sections():
        sec = section.strip().lower()
        if sec not in SECTIONS:
            raise ParseError(f"unknown section [{section}]", line=lines.get((sec, None)), field=sec)
        for key, raw in cp.items(section):
            k = key.lower()
            name = "T" if (sec == "time" and k == "t") else k
            try:
                val, known = _convert(SECTIONS[sec], name, raw)
            except ValueError as exc:
                raise ParseError(f"bad value for {sec}.{name}: {raw!r}", line=lines.get((sec, k)),
                                 field=f"{sec}.{name}") from exc
            if not known:
                raise ParseError(f"unknown key {sec}.{key}", line=lines.get((sec, k)), field=f"{sec}.{key}")
            values[sec][name] = val
    for var, raw in sorted((env or {}).items()):
        if not var.startswith(ENV_PREFIX):
            continue
        rest = var[len(ENV_PREFIX):].lower()
        sec, _, key = rest.partition("_")
        if sec not in SECTIONS or not key:
            continue
        name = "T" if (sec == "time" and key == "t") else key
        try:
            val, known = _convert(SECTIONS[sec], name, raw)
        except ValueError as exc:
            raise ParseError(f"bad value in environment variable {var}: {raw!r}", field=f"{sec}.{name}") from exc
        if not known:
            raise ParseError(f"environment variable {var} names an unknown key", field=f"{sec}.{name}")
        values[sec][name] = val
    for item in required:
        sec, _, key = item.partition(".")
        if key not in values[sec]:
            raise ParseError(f"missing required field {item}", line=lines.get((sec, None)), field=item)
    cfg = SimConfig()
    for sec, cls in SECTIONS.items():
        kw = {}
        for f in fields(cls):
            if f.name in values[sec]:
                kw[f.name] = values[sec][f.name]
            elif f.default is REQUIRED:
                kw[f.name] = None
        setattr(cfg, sec, cls(**kw))
    return cfg


def validate(cfg, subcommand=None):
    """Check every constraint; raise ValidationError listing all violations.

    Advisory conditions are appended to ``cfg.warnings`` instead.
    """
    bad = []
    d, m, g, t, n = cfg.domain, cfg.model, cfg.grid, cfg.time, cfg.noise
    if d.shape not in ("disk", "ellipse", "fourier"):
        bad.append(("shape", f"unknown shape {d.shape!r}"))
    if d.delta is not None and not d.delta > 0:
        bad.append(("delta", "delta must be positive"))
    if d.resolution < 64:
        bad.append(("resolution", "boundary resolution must be at least 64"))
    if m.eps is not None and not m.eps > 0:
        bad.append(("eps", "eps must be positive"))
    cfg.warnings = []
    eps_values = []
    if subcommand == "scalings":
        eps_values = list(cfg.scalings.eps_list)
        if len(eps_values) < 3:
            bad.append(("eps_list", "the scaling suite needs at least 3 eps values"))
    elif m.eps is not None:
        eps_values = [m.eps]
    if d.delta is not None and d.delta > 0:
        bound = eps_upper_bound(d.delta, d.original_area())
        for e in eps_values:
            if e > bound and (subcommand != "scalings" or cfg.scalings.enforce_upbound):
                bad.append(("upbound", f"eps={e!r} exceeds 1/2 C1* delta^2 = {bound:.6g}"))
            if e > d.delta**3:
                cfg.warnings.append(f"advisory: eps={e!r} > delta^3 = {d.delta**3:.6g}; "
                                    "the leading-order velocity assumes eps << delta^3")
    if g.h_over_eps is None and (g.n_theta is None or g.n_q is None) and subcommand != "scalings":
        bad.append(("grid", "give either grid.h_over_eps or both grid.n_theta and grid.n_q"))
    if g.h_over_eps is not None and not g.h_over_eps > 0:
        bad.append(("grid", "h_over_eps must be positive"))
    if g.n_theta is not None and g.n_theta < 8:
        bad.append(("grid", "n_theta must be at least 8"))
    if g.n_q is not None and g.n_q < 3:
        bad.append(("grid", "n_q must be at least 3"))
    if g.theta_ratio < 1 or g.q_ratio < 1:
        bad.append(("grid", "refinement ratios must be >= 1"))
    if t.dt is not None and not t.dt > 0:
        bad.append(("dt", "dt must be positive"))
    if t.T is not None and not t.T > 0:
        bad.append(("T", "T must be positive"))
    if t.stride < 1:
        bad.append(("stride", "stride must be >= 1"))
    if n.n_modes < 1:
        bad.append(("noise", "n_modes must be >= 1"))
    if not n.decay > 1:
        bad.append(("noise", "decay exponent must exceed 1"))
    if n.amplitude < 0:
        bad.append(("noise", "amplitude must be non-negative"))
    if cfg.initial.perturbation < 0:
        bad.append(("initial", "perturbation norm must be non-negative"))
    if not 1 <= cfg.initial.perturbation_mode <= n.n_modes:
        bad.append(("initial", "perturbation_mode must lie in 1..n_modes"))
    if cfg.run.workers < 1:
        bad.append(("workers", "workers must be >= 1"))
    if cfg.run.solver not in ("direct", "cg"):
        bad.append(("solver", "solver must be 'direct' or 'cg'"))
    if cfg.compare.reduced_stride < 1:
        bad.append(("compare", "reduced_stride must be >= 1"))
    if subcommand == "exit-times":
        if cfg.exit.replicas < 30:
            bad.append(("replicas", "exit-time statistics need at least 30 replicas"))
        if cfg.exit.norm not in ("l2", "h1"):
            bad.append(("exit", "exit norm must be 'l2' or 'h1'"))
        if not cfg.exit.ladder or any(x <= 0 for x in cfg.exit.ladder):
            bad.append(("exit", "ladder entries must be positive"))
    if bad:
        raise ValidationError(bad)
    return cfg


def parse_and_validate(text, env=None, subcommand=None):
    required = ["domain.delta"]
    if subcommand != "scalings":
        required.append("model.eps")
    if subcommand not in ("scalings", "droplet-dump"):
        required += ["time.dt", "time.T"]
    return validate(parse(text, env=env, required=tuple(required)), subcommand)


def serialize(cfg, exclude=()):
    """INI text that parses back to an equal configuration.

    ``exclude`` lists ``section.key`` entries to leave out (they fall back to
    their defaults when parsed again).
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for name, cls in SECTIONS.items():
        sec = getattr(cfg, name)
        cp[name] = {}
        for f in fields(cls):
            val = getattr(sec, f.name)
            if val is None or f"{name}.{f.name}" in exclude:
                continue
            cp[name][f.name] = _fmt(val)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def load(path, env=None, subcommand=None):
    with open(path) as fh:
        text = fh.read()
    return parse_and_validate(text, env=os.environ if env is None else env, subcommand=subcommand)
