"""``key=value`` run configuration with dotted section names.

Example::

    # coarse benchmark
    mesh.resolution = 0.03
    fom.dt = 0.01
    fom.t_end = 15
    schedule.segment_width = 0.1
    basis.rule = paper
    basis.scale = 0.1
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, ParseError
from .fem import PhysicalParams
from .fom import FomConfig
from .pod import CountRule, EnergyRule, RankRule, paper_count_rule


def parse_config_text(text, source="<config>"):
    """Flat ``{dotted.key: str}`` mapping; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ParseError(f"{source}:{lineno}: malformed key {key!r}", lineno)
        if key in out:
            raise ParseError(f"{source}:{lineno}: duplicate key {key!r}", lineno)
        out[key] = value
    return out


def _convert(value, kind, key):
    try:
        if kind is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {value!r} as {kind.__name__}") from exc


def _float_list(value, key):
    return tuple(_convert(v.strip(), float, key) for v in value.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    mesh_resolution: float = 0.03
    mesh_file: str = ""
    fom: FomConfig = field(default_factory=FomConfig)
    t_start: float = 2.0
    segment_width: float = 0.1
    basis_rule: str = "paper"
    basis_scale: float = 1.0
    basis_eps: float = 1e-4
    basis_counts: tuple = (10, 30, 10)
    basis_method: str = "snapshots"
    basis_center: bool = True
    perturb_u_hat: tuple = (1.48, 1.52)
    perturb_mu_s: tuple = (0.48e6, 0.52e6)
    out_dir: str = "out"
    threads: int = 1

    def __post_init__(self):
        if self.t_start < self.fom.ramp_end - 1e-12:
            raise ConfigError("schedule.t_start must not precede the end of the inflow ramp")
        if self.basis_rule not in ("paper", "energy", "rank", "counts"):
            raise ConfigError(f"basis.rule must be paper, energy, rank or counts, not {self.basis_rule!r}")
        if self.basis_method not in ("snapshots", "svd"):
            raise ConfigError(f"basis.method must be snapshots or svd, not {self.basis_method!r}")
        if self.segment_width <= 0 or self.threads < 1:
            raise ConfigError("schedule.segment_width and threads must be positive")

    def selection_rule(self):
        if self.basis_rule == "paper":
            return paper_count_rule(self.t_start, self.fom.t_end, self.basis_scale)
        if self.basis_rule == "energy":
            return EnergyRule(self.basis_eps)
        if self.basis_rule == "rank":
            return RankRule()
        nu, np_, nd = self.basis_counts
        return CountRule(((self.t_start, self.fom.t_end, {"u": nu, "p": np_, "d": nd}),))


_PARAM_KEYS = {f.name: f.type for f in fields(PhysicalParams) if f.name not in ("b_f", "b_s")}
_FOM_KEYS = {f.name: f.type for f in fields(FomConfig) if f.name != "params"}
_TOP_KEYS = {
    "mesh.resolution": ("mesh_resolution", float),
    "mesh.file": ("mesh_file", str),
    "schedule.t_start": ("t_start", float),
    "schedule.segment_width": ("segment_width", float),
    "basis.rule": ("basis_rule", str),
    "basis.scale": ("basis_scale", float),
    "basis.eps": ("basis_eps", float),
    "basis.method": ("basis_method", str),
    "basis.center": ("basis_center", bool),
    "out.dir": ("out_dir", str),
    "threads": ("threads", int),
}
_TYPES = {"float": float, "int": int, "bool": bool, "str": str}


def _kind(t):
    return _TYPES.get(t, t) if isinstance(t, str) else t


def config_from_mapping(raw):
    params, fom, top = {}, {}, {}
    for key, value in raw.items():
        if key.startswith("params."):
            name = key[7:]
            if name in ("b_f", "b_s"):
                vals = _float_list(value, key)
                if len(vals) != 2:
                    raise ConfigError(f"{key}: expected two components")
                params[name] = vals
            elif name in _PARAM_KEYS:
                params[name] = _convert(value, _kind(_PARAM_KEYS[name]), key)
            else:
                raise ConfigError(f"unknown key {key!r}")
        elif key.startswith("fom."):
            name = key[4:]
            if name not in _FOM_KEYS:
                raise ConfigError(f"unknown key {key!r}")
            fom[name] = _convert(value, _kind(_FOM_KEYS[name]), key)
        elif key == "basis.counts":
            vals = tuple(int(v) for v in _float_list(value, key))
            if len(vals) != 3:
                raise ConfigError("basis.counts needs three integers (u, p, d)")
            top["basis_counts"] = vals
        elif key == "perturb.u_hat_max":
            top["perturb_u_hat"] = _float_list(value, key)
        elif key == "perturb.mu_s":
            top["perturb_mu_s"] = _float_list(value, key)
        elif key in _TOP_KEYS:
            name, kind = _TOP_KEYS[key]
            top[name] = _convert(value, kind, key)
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        fom_cfg = FomConfig(params=PhysicalParams(**params), **fom)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(fom=fom_cfg, **top)


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return config_from_mapping(parse_config_text(path.read_text(), str(path)))
