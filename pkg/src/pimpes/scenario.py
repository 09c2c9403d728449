"""Scenario files: YAML with unit-tagged quantities, normalized to SI.

Schema (all quantities accept ``"<number> <unit>"``; bare numbers are SI)::

    name: ex1-desk
    description: free text
    mesh:        {nx: 30, ny: 15, lx: 300 m, ly: 150 m}   # or {file: mesh.txt}
    fluids:      {rho_w: 1000 kg/m3, rho_n: 800 kg/m3, mu_w: 1 cP, mu_n: 0.3 cP,
                  g: 9.81, grad_z: [0, 1]}
    rock:        {porosity: 0.2, beta: 2, b_c: 60 bar*md^0.5,
                  s_rw: 1e-6, s_rn: 1e-6, eps_s: 1e-3}
    permeability:                       # exactly one of uniform / regions / raster
      uniform: 50 md
      regions: {background: 1 md, boxes: [{x: [0, 300 m], y: [75 m, 150 m], value: 50 md}]}
      raster:  {file: k.txt, nx: 60, ny: 60, mapping: log10, unit: md}
    boundary:                           # every boundary edge covered exactly once
      - {side: left, kind: neumann, rate: 0.63 m3/day, s_w: 1}
      - {side: right, range: [0, 10 m], kind: dirichlet, p_w: 100 bar}
      - {tag: outlet, kind: dirichlet, p_w: 100 bar}   # mesh-file tags
      - {rest: true, kind: neumann}                     # everything not yet covered
    initial:     {s_w: 1e-6, boxes: [{x: [0, 10 m], y: [0, 150 m], value: 1}], file: s0.txt}
    sources:     [{x: [..], y: [..], rate: 1 m3/day, s_w: 1}]
    scheme:      {name: pimpes, cfl: 0.3, steps: 100, t_end: 10 day, dt: 0.1 day,
                  dt_min: 1 s, dt_max: 1 day, bounds_policy: record}
    output:      {directory: out, vtk_every: 10, checkpoint_every: 0}
    reference_pressure: 100 bar         # pinned cell pressure when no Dirichlet edge

Boxes select cells by centroid. Relative file paths are resolved against the
scenario file's directory and stored absolute.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .mesh import BoundaryTag, Mesh, build_structured_triangulation, read_mesh, tag_boundary, tag_predicate
from .physics import FluidPair, RockModel
from .schemes import Problem, SchemeConfig, SimState, initial_state
from .units import MILLIDARCY, UnitError, normalize_units, unit_factor


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class MeshSpec:
    nx: int = 0
    ny: int = 0
    lx: float = 0.0
    ly: float = 0.0
    file: Optional[str] = None


@dataclass(frozen=True)
class Box:
    x: tuple
    y: tuple
    value: float

    def contains(self, pts) -> np.ndarray:
        return ((pts[:, 0] >= self.x[0]) & (pts[:, 0] <= self.x[1])
                & (pts[:, 1] >= self.y[0]) & (pts[:, 1] <= self.y[1]))


@dataclass(frozen=True)
class PermeabilitySpec:
    kind: str  # uniform | regions | raster
    value: float = 0.0  # uniform value or background, m^2
    boxes: tuple = ()
    file: Optional[str] = None
    nx: int = 0
    ny: int = 0
    mapping: str = "linear"
    unit: float = MILLIDARCY


@dataclass(frozen=True)
class BoundarySpec:
    kind: str
    side: Optional[str] = None
    range: Optional[tuple] = None
    tag: Optional[str] = None
    rest: bool = False
    p_w: float = 0.0
    p_n: Optional[float] = None
    flux: float = 0.0
    rate: Optional[float] = None
    s_w: Optional[float] = None
    name: str = ""


@dataclass(frozen=True)
class InitialSpec:
    s_w: float = 0.0
    boxes: tuple = ()
    file: Optional[str] = None


@dataclass(frozen=True)
class SourceSpec:
    x: tuple
    y: tuple
    rate: float
    s_w: float = 1.0


@dataclass(frozen=True)
class FluidSpec:
    rho_w: float
    rho_n: float
    mu_w: float
    mu_n: float
    g: float = 9.81
    grad_z: tuple = (0.0, 1.0)


@dataclass(frozen=True)
class RockSpec:
    porosity: float = 0.2
    beta: int = 2
    b_c: float = 0.0
    s_rw: float = 1e-6
    s_rn: float = 1e-6
    eps_s: float = 1e-3


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    vtk_every: int = 0
    checkpoint_every: int = 0
    csv: str = "diagnostics.csv"


@dataclass(frozen=True)
class Scenario:
    name: str
    mesh: MeshSpec
    fluids: FluidSpec
    permeability: PermeabilitySpec
    boundary: tuple
    scheme: SchemeConfig
    rock: RockSpec = RockSpec()
    initial: InitialSpec = InitialSpec()
    sources: tuple = ()
    output: OutputSpec = OutputSpec()
    reference_pressure: float = 0.0
    description: str = ""


# --- parsing ------------------------------------------------------------------

SIDES = ("left", "right", "bottom", "top")


def _take(d: dict, where: str, required=(), optional=()) -> dict:
    if not isinstance(d, dict):
        raise ScenarioError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = [k for k in required if k not in d]
    if missing:
        raise ScenarioError(f"{where}: missing required key {where}.{missing[0]}")
    return d


def _num(d: dict, key: str, where: str, default=None, kind=float):
    if key not in d or d[key] is None:
        if default is None:
            return None
        return default
    v = d[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not float(v).is_integer():
            raise ScenarioError(f"{where}.{key}: expected an integer, got {v!r}")
        return int(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key}: expected a number, got {v!r}")
    return float(v)


def _pair(v, where: str) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ScenarioError(f"{where}: expected a [lo, hi] pair")
    lo, hi = (float(t) for t in v)
    if not lo <= hi:
        raise ScenarioError(f"{where}: lower bound exceeds upper bound")
    return (lo, hi)


def _boxes(items, where: str) -> tuple:
    if items is None:
        return ()
    out = []
    for i, b in enumerate(items):
        w = f"{where}[{i}]"
        _take(b, w, required=("x", "y", "value"))
        out.append(Box(_pair(b["x"], w + ".x"), _pair(b["y"], w + ".y"), _num(b, "value", w)))
    return tuple(out)


def _path(v, base: Path) -> str:
    p = Path(str(v))
    return str(p if p.is_absolute() else (base / p).resolve())


def _parse(raw: dict, base: Path) -> Scenario:
    _take(raw, "scenario", required=("mesh", "fluids", "permeability", "boundary", "scheme"),
          optional=("name", "description", "rock", "initial", "sources", "output", "reference_pressure"))

    m = _take(raw["mesh"], "mesh", optional=("nx", "ny", "lx", "ly", "file"))
    if m.get("file") is not None:
        mesh = MeshSpec(file=_path(m["file"], base))
    else:
        _take(m, "mesh", required=("nx", "ny", "lx", "ly"))
        mesh = MeshSpec(_num(m, "nx", "mesh", kind=int), _num(m, "ny", "mesh", kind=int),
                        _num(m, "lx", "mesh"), _num(m, "ly", "mesh"))
        if mesh.nx < 1 or mesh.ny < 1 or not mesh.lx > 0 or not mesh.ly > 0:
            raise ScenarioError("mesh: need nx, ny >= 1 and lx, ly > 0")

    f = _take(raw["fluids"], "fluids", required=("rho_w", "rho_n", "mu_w", "mu_n"), optional=("g", "grad_z"))
    gz = f.get("grad_z", (0.0, 1.0))
    if not isinstance(gz, (list, tuple)) or len(gz) != 2:
        raise ScenarioError("fluids.grad_z: expected two components")
    fluids = FluidSpec(*(_num(f, k, "fluids") for k in ("rho_w", "rho_n", "mu_w", "mu_n")),
                       g=_num(f, "g", "fluids", 9.81), grad_z=tuple(float(t) for t in gz))
    for k in ("rho_w", "rho_n", "mu_w", "mu_n"):
        if not getattr(fluids, k) > 0:
            raise ScenarioError(f"fluids.{k} must be positive, got {getattr(fluids, k)}")
    if fluids.g < 0:
        raise ScenarioError("fluids.g must be nonnegative")

    r = _take(raw.get("rock") or {}, "rock", optional=("porosity", "beta", "b_c", "s_rw", "s_rn", "eps_s"))
    d = RockSpec()
    rock = RockSpec(_num(r, "porosity", "rock", d.porosity), _num(r, "beta", "rock", d.beta, int),
                    _num(r, "b_c", "rock", d.b_c), _num(r, "s_rw", "rock", d.s_rw),
                    _num(r, "s_rn", "rock", d.s_rn), _num(r, "eps_s", "rock", d.eps_s))

    k = _take(raw["permeability"], "permeability", optional=("uniform", "regions", "raster"))
    if len(k) != 1:
        raise ScenarioError("permeability: give exactly one of uniform, regions, raster")
    if "uniform" in k:
        perm = PermeabilitySpec("uniform", _num(k, "uniform", "permeability"))
    elif "regions" in k:
        reg = _take(k["regions"], "permeability.regions", required=("background",), optional=("boxes",))
        perm = PermeabilitySpec("regions", _num(reg, "background", "permeability.regions"),
                                _boxes(reg.get("boxes"), "permeability.regions.boxes"))
    else:
        ras = _take(k["raster"], "permeability.raster", required=("file", "nx", "ny"), optional=("mapping", "unit"))
        mapping = ras.get("mapping", "linear")
        if mapping not in ("linear", "log10"):
            raise ScenarioError("permeability.raster.mapping must be linear or log10")
        unit = ras.get("unit", MILLIDARCY)
        try:
            unit = unit_factor(unit) if isinstance(unit, str) else float(unit)
        except UnitError as exc:
            raise ScenarioError(f"permeability.raster.unit: {exc}") from None
        perm = PermeabilitySpec("raster", file=_path(ras["file"], base),
                                nx=_num(ras, "nx", "permeability.raster", kind=int),
                                ny=_num(ras, "ny", "permeability.raster", kind=int),
                                mapping=mapping, unit=unit)

    if not isinstance(raw["boundary"], list) or not raw["boundary"]:
        raise ScenarioError("boundary: expected a non-empty list")
    bnd = []
    for i, b in enumerate(raw["boundary"]):
        w = f"boundary[{i}]"
        _take(b, w, required=("kind",), optional=("side", "range", "tag", "rest", "p_w", "p_n", "flux",
                                                   "rate", "s_w", "name"))
        if b["kind"] not in ("dirichlet", "neumann"):
            raise ScenarioError(f"{w}.kind must be dirichlet or neumann")
        selectors = [s for s in ("side", "tag", "rest") if b.get(s)]
        if len(selectors) != 1:
            raise ScenarioError(f"{w}: give exactly one of side, tag, rest")
        if b.get("side") is not None and b["side"] not in SIDES:
            raise ScenarioError(f"{w}.side must be one of {SIDES}")
        s_w = _num(b, "s_w", w)
        if s_w is not None and not 0 <= s_w <= 1:
            raise ScenarioError(f"{w}.s_w must lie in [0, 1]")
        bnd.append(BoundarySpec(
            kind=b["kind"], side=b.get("side"),
            range=_pair(b["range"], w + ".range") if b.get("range") is not None else None,
            tag=b.get("tag"), rest=bool(b.get("rest", False)),
            p_w=_num(b, "p_w", w, 0.0), p_n=_num(b, "p_n", w), flux=_num(b, "flux", w, 0.0),
            rate=_num(b, "rate", w), s_w=s_w, name=str(b.get("name") or b.get("side") or b.get("tag") or "rest"),
        ))

    ini = _take(raw.get("initial") or {}, "initial", optional=("s_w", "boxes", "file"))
    initial = InitialSpec(_num(ini, "s_w", "initial", 0.0), _boxes(ini.get("boxes"), "initial.boxes"),
                          _path(ini["file"], base) if ini.get("file") else None)
    for v in [initial.s_w] + [bx.value for bx in initial.boxes]:
        if not 0.0 <= v <= 1.0:
            raise ScenarioError(f"initial: saturation {v} outside [0, 1]")

    srcs = []
    for i, s in enumerate(raw.get("sources") or []):
        w = f"sources[{i}]"
        _take(s, w, required=("x", "y", "rate"), optional=("s_w",))
        srcs.append(SourceSpec(_pair(s["x"], w + ".x"), _pair(s["y"], w + ".y"), _num(s, "rate", w),
                               _num(s, "s_w", w, 1.0)))

    sc = _take(raw["scheme"], "scheme", required=("name",),
               optional=("dt", "cfl", "steps", "t_end", "dt_min", "dt_max", "bounds_policy", "backend",
                         "rtol", "direction_check"))
    dflt = SchemeConfig(cfl=1.0)
    try:
        scheme = SchemeConfig(
            scheme=str(sc["name"]).lower().replace("-", ""),
            dt=_num(sc, "dt", "scheme"), cfl=_num(sc, "cfl", "scheme"),
            dt_min=_num(sc, "dt_min", "scheme", dflt.dt_min), dt_max=_num(sc, "dt_max", "scheme", dflt.dt_max),
            steps=_num(sc, "steps", "scheme", dflt.steps, int), t_end=_num(sc, "t_end", "scheme"),
            bounds_policy=sc.get("bounds_policy", dflt.bounds_policy), backend=sc.get("backend", dflt.backend),
            rtol=_num(sc, "rtol", "scheme", dflt.rtol), direction_check=bool(sc.get("direction_check", True)),
        )
    except ValueError as exc:
        raise ScenarioError(f"scheme: {exc}") from None

    o = _take(raw.get("output") or {}, "output", optional=("directory", "vtk_every", "checkpoint_every", "csv"))
    od = OutputSpec()
    output = OutputSpec(_path(o.get("directory", od.directory), base),
                        _num(o, "vtk_every", "output", od.vtk_every, int),
                        _num(o, "checkpoint_every", "output", od.checkpoint_every, int),
                        str(o.get("csv", od.csv)))

    scen = Scenario(name=str(raw.get("name", "scenario")), mesh=mesh, fluids=fluids, permeability=perm,
                    boundary=tuple(bnd), scheme=scheme, rock=rock, initial=initial, sources=tuple(srcs),
                    output=output, reference_pressure=_num(raw, "reference_pressure", "scenario", 0.0),
                    description=str(raw.get("description", "")))
    _check_physics(scen)
    return scen


def _check_physics(s: Scenario) -> None:
    try:
        FluidPair(s.fluids.rho_w, s.fluids.rho_n, s.fluids.mu_w, s.fluids.mu_n, s.fluids.g, s.fluids.grad_z)
        RockModel(np.ones(1), s.rock.porosity, s.rock.beta, s.rock.b_c, s.rock.s_rw, s.rock.s_rn, s.rock.eps_s)
    except ValueError as exc:
        raise ScenarioError(f"rock/fluids: {exc}") from None
    if s.permeability.kind != "raster" and not s.permeability.value > 0:
        raise ScenarioError("permeability must be positive")
    if any(not b.value > 0 for b in s.permeability.boxes):
        raise ScenarioError("permeability.regions.boxes: values must be positive")


def parse_scenario(text: str, base_dir=".") -> Scenario:
    """Parse scenario YAML text into a fully SI-normalized :class:`Scenario`."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"malformed YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ScenarioError("scenario: expected a mapping at top level")
    try:
        raw = normalize_units(raw)
    except UnitError as exc:
        raise ScenarioError(str(exc)) from None
    return _parse(raw, Path(base_dir).resolve())


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from None
    return parse_scenario(text, path.parent)


def _plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def dump_scenario(s: Scenario) -> str:
    """Normalized YAML (SI values) that :func:`parse_scenario` reads back to ``s``."""
    d = _plain(s)
    perm = d.pop("permeability")
    if perm["kind"] == "uniform":
        d["permeability"] = {"uniform": perm["value"]}
    elif perm["kind"] == "regions":
        d["permeability"] = {"regions": {"background": perm["value"], "boxes": perm["boxes"]}}
    else:
        d["permeability"] = {"raster": {k: perm[k] for k in ("file", "nx", "ny", "mapping", "unit")}}
    mesh = d.pop("mesh")
    d["mesh"] = {"file": mesh["file"]} if mesh["file"] else {k: mesh[k] for k in ("nx", "ny", "lx", "ly")}
    sc = d.pop("scheme")
    sc["name"] = sc.pop("scheme")
    d["scheme"] = {k: v for k, v in sc.items() if v is not None}
    d["boundary"] = [{k: v for k, v in b.items() if v is not None and v is not False} for b in d["boundary"]]
    d["initial"] = {k: v for k, v in d["initial"].items() if v is not None}
    return yaml.safe_dump(d, sort_keys=False)


# --- building the discrete problem --------------------------------------------

def load_permeability_raster(path, nx: int, ny: int, mapping: str = "linear", unit: float = MILLIDARCY) -> np.ndarray:
    """Read ``nx*ny`` whitespace-separated values, row-major from the bottom row.

    Returns a ``(ny, nx)`` array in m^2. ``log10`` maps each value ``v`` to
    ``10**v`` before applying ``unit``.
    """
    try:
        vals = np.array(Path(path).read_text().split(), dtype=float)
    except (OSError, ValueError) as exc:
        raise ScenarioError(f"cannot read permeability raster {path}: {exc}") from None
    if vals.size != nx * ny:
        raise ScenarioError(f"permeability raster {path} has {vals.size} values, expected {nx}x{ny}={nx * ny}")
    if mapping == "log10":
        vals = 10.0 ** vals
    elif mapping != "linear":
        raise ScenarioError(f"unknown raster mapping {mapping!r}")
    k = vals.reshape(ny, nx) * unit
    if not np.all(k > 0) or not np.all(np.isfinite(k)):
        raise ScenarioError(f"permeability raster {path} has nonpositive values after mapping")
    return k


def raster_to_cells(mesh: Mesh, raster: np.ndarray) -> np.ndarray:
    """Sample a (ny, nx) raster covering the mesh bounding box at cell centroids."""
    ny, nx = raster.shape
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    c = (mesh.geom.centroid - lo) / (hi - lo)
    i = np.clip((c[:, 0] * nx).astype(int), 0, nx - 1)
    j = np.clip((c[:, 1] * ny).astype(int), 0, ny - 1)
    return raster[j, i]


def _side_predicate(side: str, rng, lo, hi, tol):
    axis, at = {"left": (0, lo[0]), "right": (0, hi[0]), "bottom": (1, lo[1]), "top": (1, hi[1])}[side]

    def pred(mid):
        on = np.abs(mid[:, axis] - at) <= tol
        if rng is not None:
            along = mid[:, 1 - axis]
            on &= (along >= rng[0] - tol) & (along <= rng[1] + tol)
        return on

    return pred


def build_mesh(s: Scenario) -> Mesh:
    if s.mesh.file:
        mesh, tags = read_mesh(s.mesh.file)
    else:
        mesh, tags = build_structured_triangulation(s.mesh.nx, s.mesh.ny, s.mesh.lx, s.mesh.ly), []
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    tol = 1e-9 * float(np.max(hi - lo))
    spec, taken = [], []
    for b in s.boundary:
        if b.rest:
            prior = list(taken)

            def pred(mid, prior=prior):
                used = np.zeros(len(mid), bool)
                for p in prior:
                    used |= p(mid)
                return ~used
        elif b.side is not None:
            pred = _side_predicate(b.side, b.range, lo, hi, tol)
        else:
            pred = tag_predicate(tags, b.tag)
        taken.append(pred)
        spec.append((pred, BoundaryTag(b.kind, b.p_w, b.p_n, b.flux, b.rate, b.s_w, b.name)))
    try:
        return tag_boundary(mesh, spec)
    except ValueError as exc:
        raise ScenarioError(f"boundary: {exc}") from None


def cell_permeability(s: Scenario, mesh: Mesh) -> np.ndarray:
    p = s.permeability
    c = mesh.geom.centroid
    if p.kind == "uniform":
        return np.full(mesh.n_cells, p.value)
    if p.kind == "regions":
        k = np.full(mesh.n_cells, p.value)
        for b in p.boxes:
            k[b.contains(c)] = b.value
        return k
    return raster_to_cells(mesh, load_permeability_raster(p.file, p.nx, p.ny, p.mapping, p.unit))


def build(s: Scenario) -> tuple[Problem, SimState]:
    """Mesh, coefficients, sources and the initial state of a scenario."""
    mesh = build_mesh(s)
    c = mesh.geom.centroid
    perm = cell_permeability(s, mesh)
    rock = RockModel(perm, s.rock.porosity, s.rock.beta, s.rock.b_c, s.rock.s_rw, s.rock.s_rn, s.rock.eps_s)
    f = s.fluids
    fluids = FluidPair(f.rho_w, f.rho_n, f.mu_w, f.mu_n, f.g, f.grad_z)

    rate = np.zeros(mesh.n_cells)
    comp = np.ones(mesh.n_cells)
    for i, src in enumerate(s.sources):
        sel = Box(src.x, src.y, 0.0).contains(c)
        if not np.any(sel):
            raise ScenarioError(f"sources[{i}]: box contains no cell centroid")
        rate[sel] += src.rate / mesh.geom.cell_area[sel].sum()
        comp[sel] = src.s_w
    problem = Problem(mesh, fluids, rock, rate, comp, p_ref=s.reference_pressure)

    if s.initial.file:
        try:
            s0 = np.loadtxt(s.initial.file, dtype=float).ravel()
        except (OSError, ValueError) as exc:
            raise ScenarioError(f"initial.file: {exc}") from None
        if s0.size != mesh.n_cells:
            raise ScenarioError(f"initial.file has {s0.size} values for {mesh.n_cells} cells")
    else:
        s0 = np.full(mesh.n_cells, s.initial.s_w)
    for b in s.initial.boxes:
        s0[b.contains(c)] = b.value
    if np.any((s0 < 0) | (s0 > 1)):
        raise ScenarioError("initial saturation outside [0, 1]")
    return problem, initial_state(problem, s0)
