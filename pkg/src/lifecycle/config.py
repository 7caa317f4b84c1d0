"""Run configuration: bracketed sections of ``key = value`` lines.

Every key is known in advance; an unknown section or key is an error, raised
before any computation starts.  ``RunConfig.dumps`` writes a canonical form,
so ``loads(dumps(cfg)) == cfg`` and ``dumps`` is idempotent.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

from .dfm import EconParams
from .grid import SolverSettings
from .montecarlo import SimConfig
from .mortality import GompertzParams


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError("empty list")
    return tuple(float(s) for s in items)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass(frozen=True)
class EconSection:
    r: float = 0.025
    rho: float = 0.025
    gammas: tuple = (4.0, 8.0)
    F0: float = 100.0
    horizon: float = 55.0
    path_step: float = 1.0

    def econ(self, gamma: float) -> EconParams:
        return EconParams(r=self.r, rho=self.rho, gamma=gamma, pi0=0.0, F0=self.F0,
                          horizon=self.horizon)


@dataclass(frozen=True)
class TableSection:
    r: float = 0.02
    horizon: float = 30.0
    sigmas: tuple = (0.0, 0.15, 0.25)
    gammas: tuple = (0.5, 1.0, 1.5, 3.0, 5.0, 10.0)
    workers: int = 1
    tolerance_pp: float = 0.05
    surfaces: bool = False  # also write each cell's beta(t, lambda) surface


@dataclass(frozen=True)
class CalibrationSection:
    sigmas: tuple = (0.0, 0.15, 0.25)
    horizon: float = 55.0
    report_every: int = 73


@dataclass(frozen=True)
class VerifySection:
    sigmas: tuple = (0.15, 0.25)
    gammas: tuple = (0.5, 1.0, 1.5, 3.0, 5.0, 10.0)
    equivalence_gammas: tuple = (0.5, 1.5, 3.0, 5.0, 10.0)
    equivalence_tol_pp: float = 0.03
    gamma_one_tol_pp: float = 0.02
    mc_sigma: float = 0.15
    survival_times: tuple = (5.0, 10.0, 15.0, 25.0, 30.0, 35.0)
    policy_gammas: tuple = (0.5, 3.0)
    z_survival: float = 3.0
    z_policy: float = 2.326


_SECTIONS = {
    "gompertz": ("gompertz", GompertzParams),
    "econ": ("econ", EconSection),
    "table2": ("table2", TableSection),
    "calibration": ("calibration", CalibrationSection),
    "solver": ("solver", SolverSettings),
    "mc": ("mc", SimConfig),
    "verify": ("verify", VerifySection),
}


@dataclass(frozen=True)
class RunConfig:
    gompertz: GompertzParams = field(default_factory=GompertzParams)
    econ: EconSection = field(default_factory=EconSection)
    table2: TableSection = field(default_factory=TableSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    solver: SolverSettings = field(default_factory=SolverSettings)
    mc: SimConfig = field(default_factory=SimConfig)
    verify: VerifySection = field(default_factory=VerifySection)

    @classmethod
    def loads(cls, text: str, source: str = "<string>") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                           comment_prefixes=("#", ";"),
                                           inline_comment_prefixes=("#",))
        parser.optionxform = str  # keys are case-sensitive (F0)
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigError(f"{source}: {exc}") from exc
        if parser.defaults():
            raise ConfigError(f"{source}: keys outside a section: {sorted(parser.defaults())}")
        unknown = [s for s in parser.sections() if s not in _SECTIONS]
        if unknown:
            raise ConfigError(f"{source}: unknown section(s) {unknown}")
        kwargs = {}
        for name, (attr, kind) in _SECTIONS.items():
            if not parser.has_section(name):
                continue
            defaults = kind()
            known = {f.name: f for f in fields(kind) if not f.name.startswith("_")}
            updates = {}
            for key, raw in parser.items(name):
                if key not in known:
                    raise ConfigError(f"{source}: unknown key [{name}] {key}")
                updates[key] = _coerce(getattr(defaults, key), raw, f"[{name}] {key}", source)
            try:
                kwargs[attr] = replace(defaults, **updates)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{source}: [{name}] {exc}") from exc
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.loads(fh.read(), source=str(path))

    def dumps(self) -> str:
        lines = []
        for name, (attr, kind) in _SECTIONS.items():
            lines.append(f"[{name}]")
            section = getattr(self, attr)
            for f in fields(kind):
                if f.name.startswith("_"):
                    continue
                lines.append(f"{f.name} = {_fmt(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, mc=replace(self.mc, seed=seed))


def _coerce(default, raw: str, what: str, source: str):
    try:
        if isinstance(default, bool):
            return _bool(raw)
        if isinstance(default, int):
            return int(raw.strip())
        if isinstance(default, float):
            return float(raw.strip())
        if isinstance(default, tuple):
            return _floats(raw)
    except ValueError as exc:
        raise ConfigError(f"{source}: {what}: {exc}") from exc
    raise ConfigError(f"{source}: {what}: unsupported type")
