"""INI run configuration.

Sections and keys (defaults in parentheses)::

    [grid]        n1 n2 n3 n4 (required), L1 L2 L3 (1.0)
    [background]  kind = flat | synthetic:<file.npz>   (flat)
    [flow]        type = qflow | tflow (required)
                  initial = zero | mode:amp,k1,k2,k3,m | random:amp | file:<file>   (zero)
                  F, S = one | cosine:axis,amplitude | file:<file>   (one)
                  dt0 (1e-3), dt_min (1e-12), dt_max (0.1), x_tol (1e-8),
                  max_steps (5000), dissipation_tol (0.05), growth (1.5), seed (0)
    [solver]      cg_tol (1e-9), cg_max_iter (20000), extension_tol (1e-12)
    [output]      dir (.), diagnostics (diagnostics.csv), snapshot_every (0)

Relative paths are resolved against the directory of the config file.
"""
from __future__ import annotations

import configparser
import difflib
import math
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .geometry import GeometryError, GridError, build_grid, flat_background, synthetic_background
from .qflow import FlowConfig
from .snapshot import read_snapshot


class ConfigError(ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)


_INT, _FLOAT, _STR = int, float, str

SCHEMA = {
    "grid": {"n1": _INT, "n2": _INT, "n3": _INT, "n4": _INT, "L1": _FLOAT, "L2": _FLOAT, "L3": _FLOAT},
    "background": {"kind": _STR},
    "flow": {
        "type": _STR, "initial": _STR, "F": _STR, "S": _STR,
        "dt0": _FLOAT, "dt_min": _FLOAT, "dt_max": _FLOAT, "x_tol": _FLOAT,
        "max_steps": _INT, "dissipation_tol": _FLOAT, "growth": _FLOAT, "seed": _INT,
    },
    "solver": {"cg_tol": _FLOAT, "cg_max_iter": _INT, "extension_tol": _FLOAT},
    "output": {"dir": _STR, "diagnostics": _STR, "snapshot_every": _INT},
}
REQUIRED_SECTIONS = ("grid", "flow")
REQUIRED_KEYS = {"grid": ("n1", "n2", "n3", "n4"), "flow": ("type",)}


@dataclass(frozen=True)
class RunConfig:
    path: Path
    flow: str
    grid: tuple
    lengths: tuple
    background: str
    initial: str
    profile: str
    flow_config: FlowConfig
    seed: int
    out_dir: Path
    diagnostics: str
    lines: dict

    @property
    def base_dir(self):
        return self.path.parent


def _line_map(text):
    """(section, key) -> line number, plus section -> line number."""
    lines, section = {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), lineno)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", s)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip()), lineno)
    return lines


def _suggest(word, options):
    close = difflib.get_close_matches(word, options, n=1, cutoff=0.5)
    return f" (did you mean '{close[0]}'?)" if close else ""


def _read(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=path) from None
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"malformed config: {exc.message.splitlines()[0]}", line, path) from None
    return parser, _line_map(text)


def _typed(parser, lines, path):
    values = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]{_suggest(section, SCHEMA)}",
                              lines.get((section, None)), path)
        schema = SCHEMA[section]
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in schema:
                raise ConfigError(f"unknown key '{key}' in [{section}]{_suggest(key, schema)}", line, path)
            kind = schema[key]
            try:
                value = kind(raw.strip())
            except ValueError:
                raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}", line, path) from None
            if kind is float and not math.isfinite(value):
                raise ConfigError(f"[{section}] {key} must be finite", line, path)
            values[(section, key)] = value
    for section in REQUIRED_SECTIONS:
        if not parser.has_section(section):
            raise ConfigError(f"missing section [{section}]", path=path)
        for key in REQUIRED_KEYS[section]:
            if (section, key) not in values:
                raise ConfigError(f"missing key '{key}' in [{section}]", lines.get((section, None)), path)
    return values


def _check_profile(spec, name, line, path):
    kind, _, arg = spec.partition(":")
    if kind == "one" and not arg:
        return
    if kind == "cosine":
        parts = arg.split(",")
        try:
            axis, amp = int(parts[0]), float(parts[1])
            if len(parts) != 2:
                raise ValueError
        except (ValueError, IndexError):
            raise ConfigError(f"{name} = {spec!r}: expected cosine:axis,amplitude", line, path) from None
        if axis not in (1, 2, 3, 4):
            raise ConfigError(f"{name}: axis must be 1..4, got {axis}", line, path)
        if abs(amp) >= 1:
            raise ConfigError(
                f"{name} must be a positive function: 1 + {amp} cos(...) is <= 0 somewhere (need |amplitude| < 1)",
                line, path,
            )
        return
    if kind == "file" and arg:
        return
    raise ConfigError(f"{name} = {spec!r}: expected one, cosine:axis,amplitude or file:<path>", line, path)


def _check_initial(spec, line, path):
    kind, _, arg = spec.partition(":")
    try:
        if kind == "zero" and not arg:
            return
        if kind == "mode":
            parts = arg.split(",")
            if len(parts) != 5:
                raise ValueError
            float(parts[0])
            [int(p) for p in parts[1:]]
            return
        if kind == "random":
            float(arg)
            return
        if kind == "file" and arg:
            return
    except ValueError:
        pass
    raise ConfigError(
        f"initial = {spec!r}: expected zero, mode:amp,k1,k2,k3,m, random:amp or file:<path>", line, path
    )


def parse_config(path, seed=None, grid_override=None):
    """Parse and validate a run config.  ``seed`` and ``grid_override``
    (a 4-tuple) take precedence over the file."""
    path = Path(path).resolve()
    parser, lines = _read(path)
    values = _typed(parser, lines, path)

    def get(section, key, default=None):
        return values.get((section, key), default)

    flow = get("flow", "type")
    if flow not in ("qflow", "tflow"):
        raise ConfigError(f"[flow] type = {flow!r}: expected qflow or tflow{_suggest(flow, ['qflow', 'tflow'])}",
                          lines.get(("flow", "type")), path)
    dims = tuple(get("grid", k) for k in ("n1", "n2", "n3", "n4"))
    if grid_override is not None:
        dims = tuple(grid_override)
    lengths = tuple(get("grid", k, 1.0) for k in ("L1", "L2", "L3"))
    try:
        build_grid(*dims, *lengths)
    except GridError as exc:
        raise ConfigError(str(exc), lines.get(("grid", None)), path) from None

    background = get("background", "kind", "flat")
    kind, _, arg = background.partition(":")
    if not (background == "flat" or (kind == "synthetic" and arg)):
        raise ConfigError(f"[background] kind = {background!r}: expected flat or synthetic:<file.npz>",
                          lines.get(("background", "kind")), path)
    initial = get("flow", "initial", "zero")
    _check_initial(initial, lines.get(("flow", "initial")), path)
    pname = "F" if flow == "qflow" else "S"
    other = "S" if flow == "qflow" else "F"
    if get("flow", other) is not None:
        raise ConfigError(f"key '{other}' does not apply to a {flow} run (use '{pname}')",
                          lines.get(("flow", other)), path)
    profile = get("flow", pname, "one")
    _check_profile(profile, pname, lines.get(("flow", pname)), path)

    base = FlowConfig()
    overrides = {k: get("flow", k) for k in ("dt0", "dt_min", "dt_max", "x_tol", "max_steps", "dissipation_tol", "growth")}
    overrides.update({k: get("solver", k) for k in ("cg_tol", "cg_max_iter", "extension_tol")})
    overrides["snapshot_every"] = get("output", "snapshot_every")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        flow_config = replace(base, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc), path=path) from None
    if flow_config.max_steps < 0 or flow_config.cg_max_iter < 1 or flow_config.snapshot_every < 0:
        raise ConfigError("max_steps, cg_max_iter and snapshot_every must be nonnegative counts", path=path)

    out_dir = Path(get("output", "dir", "."))
    return RunConfig(
        path=path, flow=flow, grid=dims, lengths=lengths, background=background,
        initial=initial, profile=profile, flow_config=flow_config,
        seed=get("flow", "seed", 0) if seed is None else int(seed),
        out_dir=out_dir if out_dir.is_absolute() else path.parent / out_dir,
        diagnostics=get("output", "diagnostics", "diagnostics.csv"), lines=lines,
    )


def _resolve(cfg, name):
    p = Path(name)
    return p if p.is_absolute() else cfg.base_dir / p


def _load_array(cfg, name, shape, what):
    path = _resolve(cfg, name)
    try:
        if path.suffix == ".pfld":
            arr, _, _ = read_snapshot(path)
        else:
            arr = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load {what} from {path}: {exc}", path=cfg.path) from None
    arr = np.asarray(arr, dtype=float)
    if arr.shape != shape:
        raise ConfigError(f"{what} in {path} has shape {arr.shape}, expected {shape}", path=cfg.path)
    return arr


def build_geometry(cfg):
    grid = build_grid(*cfg.grid, *cfg.lengths)
    if cfg.background == "flat":
        return flat_background(grid)
    path = _resolve(cfg, cfg.background.partition(":")[2])
    try:
        with np.load(path, allow_pickle=False) as data:
            fields = {k: data[k] for k in data.files}
        return synthetic_background(grid, **fields)
    except (OSError, ValueError, GeometryError) as exc:
        raise ConfigError(f"synthetic background {path}: {exc}",
                          cfg.lines.get(("background", "kind")), cfg.path) from None


def _profile_field(cfg, geo):
    grid = geo.grid
    boundary = cfg.flow == "tflow"
    shape = grid.face_shape if boundary else grid.shape
    kind, _, arg = cfg.profile.partition(":")
    if kind == "one":
        return np.ones(shape)
    if kind == "cosine":
        axis, amp = arg.split(",")
        axis, amp = int(axis), float(amp)
        x = grid.coords()
        if axis == 4:
            phase = np.pi * x[3]
            if boundary:
                phase = np.pi * np.array([0.0, 1.0]).reshape(2, 1, 1, 1)
        else:
            phase = 2 * np.pi * x[axis - 1] / grid.lengths[axis - 1]
            if boundary:
                phase = phase[..., 0][None]
        return np.broadcast_to(1.0 + amp * np.cos(phase), shape).copy()
    f = _load_array(cfg, arg, shape, "profile")
    if np.any(f <= 0):
        raise ConfigError("profile from file must be positive everywhere", path=cfg.path)
    return f


def _initial_field(cfg, geo):
    grid = geo.grid
    kind, _, arg = cfg.initial.partition(":")
    x1, x2, x3, x4 = grid.coords()
    L = grid.lengths
    if kind == "zero":
        u = np.zeros(grid.shape)
    elif kind == "mode":
        parts = arg.split(",")
        amp, (k1, k2, k3, m) = float(parts[0]), [int(p) for p in parts[1:]]
        u = amp * (np.cos(2 * np.pi * k1 * x1 / L[0]) * np.cos(2 * np.pi * k2 * x2 / L[1])
                   * np.cos(2 * np.pi * k3 * x3 / L[2]) * np.cos(m * np.pi * x4))
    elif kind == "random":
        u = random_smooth_field(grid, float(arg), cfg.seed)
    else:
        shape = grid.face_shape if cfg.flow == "tflow" else grid.shape
        return _load_array(cfg, arg, shape, "initial field")
    u = np.broadcast_to(u, grid.shape)
    return grid.trace(u) if cfg.flow == "tflow" else np.array(u)


def random_smooth_field(grid, amp, seed, kmax=2):
    """amp times a normalized random combination of the cosine modes
    cos(2 pi k.x) cos(m pi x4), 0 <= k_i, m <= kmax, excluding the constant.
    Such fields satisfy both reflection boundary conditions.  Uses PCG64."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x1, x2, x3, x4 = grid.coords()
    L = grid.lengths
    u = np.zeros(grid.shape)
    r = range(kmax + 1)
    for k1 in r:
        for k2 in r:
            for k3 in r:
                for m in r:
                    c = rng.standard_normal()
                    if k1 == k2 == k3 == m == 0:
                        continue
                    u += c * (np.cos(2 * np.pi * k1 * x1 / L[0]) * np.cos(2 * np.pi * k2 * x2 / L[1])
                              * np.cos(2 * np.pi * k3 * x3 / L[2]) * np.cos(m * np.pi * x4))
    return amp * u / np.abs(u).max()


def build_run(cfg):
    """Materialize (geometry, profile F or S, initial field) for a config."""
    geo = build_geometry(cfg)
    if cfg.flow == "tflow" and np.any(geo.Q0 != 0):
        raise ConfigError("the T-flow requires a background with Q0 = 0",
                          cfg.lines.get(("background", "kind")), cfg.path)
    return geo, _profile_field(cfg, geo), _initial_field(cfg, geo)
