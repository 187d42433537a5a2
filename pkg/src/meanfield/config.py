"""Run configuration: parsing, validation, serialisation and presets.

A configuration is a mapping with these keys (all optional except
``surface``)::

    surface:  {kind: torus, periods: [[1, 0], [0, 1.5]]}  or  {kind: sphere}
    sources:  [{point: [0, 0], n: 2}, ...]
    h:        positive constant multiplying the potential (default 1)
    points:   [[x, y], ...]  concentration points (m = len(points))
    grid:     grid points per period
    r0:       cutoff radius (default: largest admissible)
    sigma:    star-norm exponent in (0, 1)
    deltas:   [delta, ...]  expansion sweep
    lam:      number, "window+" or "window-"
    path:     [lam0, lam1, ...]  continuation targets
    eps:      [eps, ...]  Chern-Simons parameters
    radii:    [r, ...]  mass-ball radii
    output:   output directory
    seed:     RNG seed
"""
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .errors import ConfigError
from .landscape import Configuration, SingularData
from .surface import FlatTorus, RoundSphere


@dataclass
class RunConfig:
    surface: dict
    sources: list = field(default_factory=list)
    h: float = 1.0
    points: list = field(default_factory=list)
    grid: int = 256
    r0: float = None
    sigma: float = 0.5
    deltas: list = field(default_factory=lambda: [0.08, 0.057, 0.04, 0.028, 0.02])
    lam: object = None
    path: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    radii: list = field(default_factory=lambda: [0.1])
    output: str = "out"
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        self.validate()

    # -- validation -------------------------------------------------------
    def validate(self):
        s = self.surface
        if not isinstance(s, dict) or "kind" not in s:
            raise ConfigError("surface: expected a mapping with a 'kind' key")
        extra = set(s) - {"kind", "periods"}
        if extra:
            raise ConfigError(f"surface.{sorted(extra)[0]}: unknown key")
        if s["kind"] == "torus":
            P = s.get("periods")
            try:
                P = np.array(P, dtype=float)
            except (TypeError, ValueError):
                raise ConfigError("surface.periods: expected two 2-vectors") from None
            if P.shape != (2, 2) or abs(np.linalg.det(P)) < 1e-12:
                raise ConfigError("surface.periods: expected two independent 2-vectors")
            dim = 2
        elif s["kind"] == "sphere":
            if "periods" in s:
                raise ConfigError("surface.periods: not used on the sphere")
            dim = 3
        else:
            raise ConfigError(f"surface.kind: unknown surface {s['kind']!r}")
        for i, src in enumerate(self.sources):
            if not isinstance(src, dict) or set(src) != {"point", "n"}:
                raise ConfigError(f"sources[{i}]: expected keys 'point' and 'n'")
            if len(src["point"]) != dim:
                raise ConfigError(f"sources[{i}].point: expected {dim} coordinates")
            if not float(src["n"]) > 0:
                raise ConfigError(f"sources[{i}].n: multiplicity must be positive")
        if not float(self.h) > 0:
            raise ConfigError("h: must be positive")
        for i, p in enumerate(self.points):
            if len(p) != dim:
                raise ConfigError(f"points[{i}]: expected {dim} coordinates")
        if int(self.grid) < 16:
            raise ConfigError("grid: at least 16 points per period")
        if self.r0 is not None and not float(self.r0) > 0:
            raise ConfigError("r0: must be positive")
        if not 0 < float(self.sigma) < 1:
            raise ConfigError("sigma: must lie in (0, 1)")
        for key in ("deltas", "eps", "radii"):
            for i, v in enumerate(getattr(self, key)):
                if not float(v) > 0:
                    raise ConfigError(f"{key}[{i}]: must be positive")
        if any(float(d) >= 0.5 for d in self.deltas):
            raise ConfigError("deltas: values must be small (below 0.5)")
        if self.lam is not None and not isinstance(self.lam, (int, float)) \
                and self.lam not in ("window+", "window-"):
            raise ConfigError("lam: expected a number, 'window+' or 'window-'")
        for i, v in enumerate(self.path):
            if not float(v) > 0:
                raise ConfigError(f"path[{i}]: must be positive")

    # -- construction -----------------------------------------------------
    def make_surface(self):
        if self.surface["kind"] == "torus":
            return FlatTorus(self.surface["periods"])
        return RoundSphere()

    def data(self):
        s = self.make_surface()
        pts = [src["point"] for src in self.sources] or None
        n = [src["n"] for src in self.sources] or None
        hv = float(self.h)
        h = None if hv == 1.0 else (lambda x: np.full(np.shape(x)[:-1], hv))
        return SingularData(s, pts, n, h=h, name=self.name)

    def configuration(self):
        if not self.points:
            raise ConfigError("points: at least one concentration point is required")
        return Configuration(self.make_surface(), self.points)

    @property
    def m(self):
        return len(self.points)

    # -- serialisation ----------------------------------------------------
    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("configuration: expected a mapping at the top level")
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(f"{k}: unknown key")
        if "surface" not in d:
            raise ConfigError("surface: required key missing")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"configuration: {exc}") from None

    def dumps(self, fmt="json"):
        if fmt == "json":
            return json.dumps(self.to_dict(), indent=2, sort_keys=True)
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text, fmt="json"):
        try:
            d = json.loads(text) if fmt == "json" else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(f"configuration: cannot parse ({exc})") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        fmt = "yaml" if str(path).endswith((".yaml", ".yml")) else "json"
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        return cls.loads(text, fmt)


PRESETS = {
    "unit-square-k1": dict(
        surface={"kind": "torus", "periods": [[1.0, 0.0], [0.0, 1.0]]},
        points=[[0.5, 0.5]]),
    "rect-torus-n2": dict(
        surface={"kind": "torus", "periods": [[1.0, 0.0], [0.0, 1.5]]},
        sources=[{"point": [0.0, 0.0], "n": 2}],
        points=[[0.5, 0.75]],
        path=[8 * np.pi + 0.05, 8 * np.pi + 0.005],
        eps=[1e-3, 5e-4, 2.5e-4]),
    "sphere-antipodal": dict(
        surface={"kind": "sphere"},
        sources=[{"point": [0.0, 0.0, 1.0], "n": 1}, {"point": [0.0, 0.0, -1.0], "n": 1}],
        points=[[1.0, 0.0, 0.0]]),
}


def preset(name):
    try:
        d = PRESETS[name]
    except KeyError:
        raise ConfigError(f"preset: unknown preset {name!r} (choose from {', '.join(PRESETS)})") from None
    return RunConfig.from_dict(dict(d, name=name))
