"""Scenario configuration (INI files) and initial-data profiles."""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ..metrics import MetricConfig


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


PROFILE_KINDS = ("bump", "zero", "dipole")
MODES = ("cartesian", "radial")
NONLINEARITIES = ("full", "linear", "flat-null-only")


@dataclass
class Profile:
    """Compactly supported data shape; ``bump`` is ``A exp(1 - 1/(1 - |x-c|^2/R^2))``."""

    kind: str = "bump"
    amplitude: float = 1.0
    radius: float = 2.0
    center: list[float] = field(default_factory=list)

    def validate(self, n: int, B: float) -> None:
        if self.kind not in PROFILE_KINDS:
            raise ConfigError(f"unknown profile {self.kind!r}; choose from {PROFILE_KINDS}")
        if self.kind == "zero":
            return
        c = self.center or [0.0] * n
        if len(c) != n:
            raise ConfigError(f"profile center must have {n} entries")
        if self.radius <= 0:
            raise ConfigError("profile radius must be positive")
        if math.hypot(*c) + self.radius > B + 1e-12:
            raise ConfigError(f"profile support (center {c}, radius {self.radius}) exceeds |x| <= B = {B}")

    def __call__(self, x) -> np.ndarray:
        """Evaluate on coordinate arrays ``x = [x1, x2, ...]``."""
        shape = np.broadcast_shapes(*(np.shape(v) for v in x))
        if self.kind == "zero":
            return np.zeros(shape)
        c = self.center or [0.0] * len(x)
        q = sum((np.asarray(v) - cv) ** 2 for v, cv in zip(x, c)) / self.radius**2
        q = np.broadcast_to(q, shape)
        out = np.zeros(shape)
        inside = q < 1.0
        out[inside] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - q[inside]))
        if self.kind == "dipole":
            out *= (np.broadcast_to(np.asarray(x[0]), shape) - c[0]) / self.radius
        return out


@dataclass
class ScenarioConfig:
    n: int = 2
    mode: str = "cartesian"
    nonlinearity: str = "full"
    epsilon: float = 1e-2
    B: float = 2.0
    f: Profile = field(default_factory=Profile)
    g: Profile = field(default_factory=lambda: Profile(kind="zero"))
    points: int = 256
    half_width: float | None = None
    cfl: float = 0.4
    accuracy: int = 4  # order of the centered spatial stencils (4, 6 or 8)
    boundary: str = "zero"
    zero_outside_cone: bool = True
    s_max: float = 15.0
    ds: float | None = None
    s_first: float | None = None
    m_diag: int = 2
    flat_slices: bool = False
    mms: str | None = None
    t_end: float | None = None
    metric: MetricConfig = field(default_factory=MetricConfig)

    # -- derived -------------------------------------------------------------
    @property
    def t0(self) -> float:
        return self.B + 1.0

    @property
    def s0(self) -> float:
        return self.B + 1.0

    @property
    def final_time(self) -> float:
        """Coordinate time at which the last hyperboloid leaves the cone K."""
        if self.t_end is not None:
            return self.t_end
        return 0.5 * (self.s_max**2 + 1.0)

    @property
    def domain_half_width(self) -> float:
        if self.half_width is not None:
            return self.half_width
        return self.final_time - 1.0 + 2.0

    @property
    def h(self) -> float:
        if self.mode == "radial":
            return self.domain_half_width / self.points
        return 2.0 * self.domain_half_width / (self.points - 1)

    @property
    def dt(self) -> float:
        return self.cfl * self.h

    @property
    def ring_depth(self) -> int:
        return 2 * self.m_diag + 4

    @property
    def slice_spacing(self) -> float:
        return self.ds if self.ds is not None else max(0.25, (self.s_max - self.s0) / 40.0)

    def slice_times(self) -> np.ndarray:
        first = self.s_first if self.s_first is not None else self.s0 + 1.0
        count = int(math.floor((self.s_max - first) / self.slice_spacing + 1e-9)) + 1
        return first + self.slice_spacing * np.arange(max(count, 0))

    # -- validation ------------------------------------------------------------
    def validate(self) -> "ScenarioConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ConfigError(f"nonlinearity must be one of {NONLINEARITIES}")
        if self.mode == "cartesian" and self.n not in (1, 2):
            raise ConfigError("cartesian mode supports n = 1, 2")
        if self.mode == "radial" and self.n not in (2, 3):
            raise ConfigError("radial mode supports n = 2, 3")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.B < 1:
            raise ConfigError("B must be >= 1")
        if not 0 < self.cfl <= 0.5:
            raise ConfigError("cfl must lie in (0, 0.5]")
        if self.accuracy not in (4, 6, 8):
            raise ConfigError("accuracy must be 4, 6 or 8")
        if self.points < 16:
            raise ConfigError("need at least 16 grid points per axis")
        if self.m_diag < 0:
            raise ConfigError("m_diag must be >= 0")
        if self.boundary not in ("zero", "periodic"):
            raise ConfigError("boundary must be 'zero' or 'periodic'")
        for prof in (self.f, self.g):
            prof.validate(self.n, self.B)
        if self.domain_half_width < self.B + 1:
            raise ConfigError(f"domain half width {self.domain_half_width} does not contain the data support B = {self.B}")
        if self.mms is None and self.s_max <= self.s0:
            raise ConfigError("s_max must exceed s0 = B + 1")
        if self.mms is None and self.domain_half_width < self.final_time - 1.0:
            raise ConfigError("domain too small to contain the cone up to the final hyperboloid")
        if self.mode == "radial" and not self.metric.is_isotropic(self.n):
            raise ConfigError("radial mode needs a rotation-invariant metric")
        if self.mode == "radial":
            for prof in (self.f, self.g):
                if prof.kind == "dipole" or any(prof.center):
                    raise ConfigError("radial mode needs centred radial profiles")
        if self.metric.kind == "perturbed":
            try:
                self.metric.coefficient_matrix(self.n)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return self

    # -- serialisation -----------------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["f"] = Profile(**d.get("f", {}))
        d["g"] = Profile(**d.get("g", {"kind": "zero"}))
        d["metric"] = MetricConfig(**d.get("metric", {}))
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        sc = {}
        for f in fields(self):
            if f.name in ("f", "g", "metric"):
                continue
            sc[f.name] = json.dumps(getattr(self, f.name))
        cp["scenario"] = sc
        for name in ("f", "g"):
            cp[f"profile.{name}"] = {k: json.dumps(v) for k, v in asdict(getattr(self, name)).items()}
        cp["metric"] = {k: json.dumps(v) for k, v in asdict(self.metric).items()}
        lines = [
            "# epsilon: data amplitude; B: support radius, data on t0 = B + 1 (= s0)",
            "# metric.delta / metric.gamma: perturbation amplitude and decay exponent",
        ]
        import io

        buf = io.StringIO()
        cp.write(buf)
        return "\n".join(lines) + "\n" + buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())


def _decode(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (B)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    known = {f.name for f in fields(ScenarioConfig)}
    d: dict = {}
    if cp.has_section("scenario"):
        for k, v in cp["scenario"].items():
            if k not in known:
                raise ConfigError(f"unknown scenario key {k!r}")
            d[k] = _decode(v)
    for name in ("f", "g"):
        sec = f"profile.{name}"
        if cp.has_section(sec):
            d[name] = {k: _decode(v) for k, v in cp[sec].items()}
    if cp.has_section("metric"):
        d["metric"] = {k: _decode(v) for k, v in cp["metric"].items()}
    try:
        cfg = ScenarioConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
