"""Run configuration: INI-style text with one section per concern.

Lengths are given in millimetres (keys ending in ``_mm``) and stored in
metres. Unknown sections or keys are rejected; omitted optional keys take
the defaults below, and ``serialize`` writes every value back out so the
effective configuration can be recorded.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from decimal import Decimal
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .errors import ConfigError, InvalidArgument
from .grid import EDGES, BoundarySpec, Domain, Grid, Segment, build_grid
from .media import MediaParams
from .turing.kinetics import ReactionCoeffs
from .turing.schedule import AnisotropySchedule, Phase

REQUIRED = object()


def opt(key, default=REQUIRED, mm=False, kind=None, check=None):
    return field(default=None if default is REQUIRED else default,
                 metadata=dict(key=key, required=default is REQUIRED, mm=mm, kind=kind, check=check))


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _edge(v):
    return v in EDGES


@dataclass(frozen=True)
class DomainSection:
    width: float = opt("width_mm", mm=True, check=_positive)
    height: float = opt("height_mm", mm=True, check=_positive)


@dataclass(frozen=True)
class InletSection:
    edge: str = opt("edge", kind=str, check=_edge)
    offset: float = opt("offset_mm", mm=True, check=_nonneg)
    width: float = opt("width_mm", mm=True, check=_positive)
    velocity: float = opt("velocity_m_s", check=_positive)


@dataclass(frozen=True)
class OutletSection:
    edge: str = opt("edge", kind=str, check=_edge)
    offset: float = opt("offset_mm", 0.0, mm=True, check=_nonneg)
    width: Optional[float] = opt("width_mm", None, mm=True, check=_positive)


@dataclass(frozen=True)
class FluidSection:
    rho: float = opt("rho", 1.204, check=_positive)
    eta: float = opt("eta", 1.81e-5, check=_positive)


@dataclass(frozen=True)
class MediaSection:
    wc_min: float = opt("wc_min_mm", 0.6e-3, mm=True, check=_positive)
    wc_max: float = opt("wc_max_mm", 1.8e-3, mm=True, check=_positive)
    ww: float = opt("ww_mm", 0.6e-3, mm=True, check=_positive)
    q: float = opt("q", 0.01, check=_positive)
    Da: float = opt("Da", 1e-5, check=_positive)
    length: Optional[float] = opt("length_mm", None, mm=True, check=_positive)
    mode: str = opt("mode", "new", kind=str, check=lambda v: v in ("new", "std"))


@dataclass(frozen=True)
class GridSection:
    design_nx: int = opt("design_nx", kind=int, check=lambda v: v >= 4)
    design_ny: int = opt("design_ny", kind=int, check=lambda v: v >= 4)
    rd_nx: int = opt("rd_nx", kind=int, check=lambda v: v >= 4)
    rd_ny: int = opt("rd_ny", kind=int, check=lambda v: v >= 4)
    verify_nx: Optional[int] = opt("verify_nx", None, kind=int, check=lambda v: v >= 4)
    verify_ny: Optional[int] = opt("verify_ny", None, kind=int, check=lambda v: v >= 4)


@dataclass(frozen=True)
class FlowSection:
    stokes: bool = opt("stokes", False, kind=bool)
    tol: float = opt("tol", 1e-6, check=_positive)
    wall_slip: bool = opt("wall_slip", False, kind=bool)


@dataclass(frozen=True)
class OptimSection:
    max_iters: int = opt("max_iters", 100, kind=int, check=_nonneg)
    w_dissipation: float = opt("w_dissipation", 0.5, check=_nonneg)
    w_uniformity: float = opt("w_uniformity", 0.5, check=_nonneg)
    move: float = opt("move", 0.1, check=lambda v: 0 < v <= 1)
    gamma0: float = opt("gamma0", 0.5, check=lambda v: 0 <= v <= 1)
    frozen: bool = opt("frozen", False, kind=bool)
    filter_radius: float = opt("filter_mm", 5e-3, mm=True, check=_nonneg)
    passive_band: bool = opt("passive_band", True, kind=bool)


_RC = ReactionCoeffs()


@dataclass(frozen=True)
class RDSection:
    a_u: float = opt("a_u", _RC.a_u)
    b_u: float = opt("b_u", _RC.b_u)
    c_u: float = opt("c_u", _RC.c_u)
    d_u: float = opt("d_u", _RC.d_u, check=_positive)
    a_v: float = opt("a_v", _RC.a_v)
    b_v: float = opt("b_v", _RC.b_v)
    c_v: float = opt("c_v", _RC.c_v)
    d_v: float = opt("d_v", _RC.d_v, check=_positive)
    F_max: float = opt("F_max", _RC.F_max, check=_positive)
    G_max: float = opt("G_max", _RC.G_max, check=_positive)
    diffusion_ratio: float = opt("diffusion_ratio", _RC.diffusion_ratio, check=_positive)
    schedule: tuple = opt("schedule", AnisotropySchedule.default().phases, kind="schedule")
    dt: Optional[float] = opt("dt", None, check=_positive)
    seed: int = opt("seed", 0, kind=int, check=_nonneg)
    outlet_wc: Optional[float] = opt("outlet_wc_mm", None, mm=True, check=_positive)
    inner_line: float = opt("inner_line_mm", 3e-3, mm=True, check=_positive)
    pin_band: bool = opt("pin_band", True, kind=bool)
    pin_walls: bool = opt("pin_walls", False, kind=bool)
    pin_inlet: bool = opt("pin_inlet", False, kind=bool)
    window_pitches: float = opt("window_pitches", 2.0, check=_positive)


@dataclass(frozen=True)
class OutputSection:
    directory: str = opt("directory", "run", kind=str)


SECTIONS = {
    "domain": DomainSection, "inlet": InletSection, "outlet": OutletSection, "fluid": FluidSection,
    "media": MediaSection, "grid": GridSection, "flow": FlowSection, "optim": OptimSection,
    "rd": RDSection, "output": OutputSection,
}
OPTIONAL_SECTIONS = {"outlet", "fluid", "media", "flow", "optim", "rd", "output"}


@dataclass(frozen=True)
class RunConfig:
    domain: DomainSection
    inlet: InletSection
    outlet: OutletSection
    fluid: FluidSection
    media: MediaSection
    grid: GridSection
    flow: FlowSection
    optim: OptimSection
    rd: RDSection
    output: OutputSection

    # -- derived objects ---------------------------------------------------------------
    def domain_obj(self) -> Domain:
        return Domain(self.domain.width, self.domain.height)

    def boundary(self) -> BoundarySpec:
        return BoundarySpec(Segment(self.inlet.edge, self.inlet.offset, self.inlet.width, self.inlet.velocity),
                            Segment(self.outlet.edge, self.outlet.offset, self.outlet.width),
                            wall_slip=self.flow.wall_slip)

    def media_params(self) -> MediaParams:
        m = self.media
        length = m.length if m.length is not None else self.domain.width
        return MediaParams(m.wc_min, m.wc_max, m.ww, m.q, m.Da, length)

    def coeffs(self) -> ReactionCoeffs:
        r = self.rd
        return ReactionCoeffs(r.a_u, r.b_u, r.c_u, r.d_u, r.a_v, r.b_v, r.c_v, r.d_v,
                              r.F_max, r.G_max, r.diffusion_ratio)

    def schedule(self) -> AnisotropySchedule:
        return AnisotropySchedule(self.rd.schedule)

    def design_grid(self) -> Grid:
        return build_grid(self.domain_obj(), nx=self.grid.design_nx, ny=self.grid.design_ny)

    def rd_grid(self) -> Grid:
        return build_grid(self.domain_obj(), nx=self.grid.rd_nx, ny=self.grid.rd_ny)

    def verify_grid(self) -> Grid:
        nx = self.grid.verify_nx or self.grid.rd_nx
        ny = self.grid.verify_ny or self.grid.rd_ny
        return build_grid(self.domain_obj(), nx=nx, ny=ny)

    def outlet_wc(self) -> float:
        return self.rd.outlet_wc if self.rd.outlet_wc is not None else self.media.wc_min

    def replace(self, **sections):
        return dataclasses.replace(self, **sections)


# -- text conversion ---------------------------------------------------------------------
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_schedule(text):
    phases = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = [float(p) for p in item.split(":")]
        if len(parts) not in (2, 3):
            raise ValueError(f"phase {item!r} must be duration:l_u or duration:l_u:l_v")
        phases.append(Phase(*parts))
    return AnisotropySchedule(tuple(phases)).phases


def _format_schedule(phases):
    return ", ".join(f"{p.duration!r}:{p.l_u!r}:{p.l_v!r}" for p in phases)


def _mm_text(meters: float) -> str:
    """Millimetre text that converts back to exactly ``meters``."""
    return format(Decimal(repr(float(meters))).scaleb(3), "f")


def _mm_to_m(text: str) -> float:
    # decimal shift, so the shortest repr of a length in metres survives the trip
    return float(Decimal(text).scaleb(-3))


def _convert(text, f, meta):
    kind = meta["kind"]
    if text.lower() in ("none", "") and f.default is None and not meta["required"]:
        return None
    if kind is str:
        return text
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind == "schedule":
        return _parse_schedule(text)
    val = float(text)
    if not np.isfinite(val):
        raise ValueError("value must be finite")
    return _mm_to_m(text) if meta["mm"] else val


def _format(value, meta):
    if value is None:
        return "none"
    kind = meta["kind"]
    if kind is bool:
        return "true" if value else "false"
    if kind == "schedule":
        return _format_schedule(value)
    if kind in (str, int):
        return str(value)
    return _mm_text(value) if meta["mm"] else repr(float(value))


def _line_numbers(text):
    """Map (section, key) and sections to 1-based line numbers."""
    where, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"^\[(.+)\]$", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), n)
        elif line and line[0] not in "#;" and section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            where.setdefault((section, key), n)
    return where


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text; errors name the key and line."""
    lines = _line_numbers(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}", None, getattr(exc, "lineno", None)) from exc
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", sec, lines.get((sec, None)))
    values = {}
    for sec, cls in SECTIONS.items():
        if not cp.has_section(sec):
            if sec not in OPTIONAL_SECTIONS:
                raise ConfigError(f"missing section [{sec}]", sec, None)
            items = {}
        else:
            items = dict(cp.items(sec))
        known = {f.metadata["key"]: f for f in fields(cls)}
        for key in items:
            if key not in known:
                raise ConfigError(f"unknown key {sec}.{key}", f"{sec}.{key}", lines.get((sec, key)))
        kwargs = {}
        for key, f in known.items():
            meta = f.metadata
            name = f"{sec}.{key}"
            line = lines.get((sec, key))
            if key not in items:
                if meta["required"]:
                    raise ConfigError(f"missing required key {name}", name, lines.get((sec, None)))
                kwargs[f.name] = f.default
                continue
            try:
                val = _convert(items[key].strip(), f, meta)
            except (ValueError, InvalidArgument) as exc:
                raise ConfigError(f"cannot parse {name}: {exc}", name, line) from exc
            check = meta["check"]
            if val is not None and check is not None and not check(val):
                raise ConfigError(f"invalid value for {name}: {items[key].strip()}", name, line)
            kwargs[f.name] = val
        values[sec] = cls(**kwargs)
    cfg = RunConfig(**values)
    _validate(cfg, lines)
    return cfg


def _validate(cfg: RunConfig, lines):
    def fail(msg, sec, key):
        raise ConfigError(msg, f"{sec}.{key}", lines.get((sec, key)))

    m = cfg.media
    if m.wc_min > m.wc_max:
        fail("wc_min_mm must not exceed wc_max_mm", "media", "wc_min_mm")
    try:
        cfg.boundary().validate(cfg.domain_obj())
    except InvalidArgument as exc:
        fail(str(exc), "inlet", "offset_mm")
    ow = cfg.outlet_wc()
    if not m.wc_min <= ow <= m.wc_max:
        fail("outlet channel width outside [wc_min, wc_max]", "rd", "outlet_wc_mm")
    for which, nx, ny in (("rd", cfg.grid.rd_nx, cfg.grid.rd_ny),
                          ("verify", cfg.grid.verify_nx or cfg.grid.rd_nx, cfg.grid.verify_ny or cfg.grid.rd_ny)):
        h = max(cfg.domain.width / nx, cfg.domain.height / ny)
        if h > m.wc_min / 4 * (1 + 1e-12):
            fail(f"{which} grid cell {h * 1e3:.4g} mm does not resolve wc_min with 4 cells",
                 "grid", f"{which}_nx")
    try:
        cfg.coeffs()
    except InvalidArgument as exc:
        fail(str(exc), "rd", "d_u")


def serialize(cfg: RunConfig) -> str:
    """Configuration text with every key written out; ``parse_config`` inverts it."""
    out = []
    for sec, cls in SECTIONS.items():
        out.append(f"[{sec}]")
        obj = getattr(cfg, sec)
        for f in fields(cls):
            out.append(f"{f.metadata['key']} = {_format(getattr(obj, f.name), f.metadata)}")
        out.append("")
    return "\n".join(out)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
