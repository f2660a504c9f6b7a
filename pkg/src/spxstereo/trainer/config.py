"""Run configuration: typed fields, range checks, key=value files and overrides."""
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from ..errors import ConfigError

# fields that may change between a checkpoint and its resumption
RESUMABLE = frozenset({"iters", "checkpoint_every"})


@dataclass
class Config:
    d_max: int = 16
    crop_h: int = 64
    crop_w: int = 96
    cell_size: int = 16
    k: int = 6
    lam: float = 1.0
    mu: float = 0.1
    w: float = 5e-3
    cost_mode: str = "group_corr"
    groups: int = 8
    stages: int = 2
    stage_weights: tuple = (0.5, 1.0)
    lr: float = 1e-3
    lr_milestones: tuple = (0.6, 0.75, 0.9)
    lr_gamma: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 4
    iters: int = 500
    seed: int = 0
    v_min: float = 1.0
    v_max: float = 0.0
    n_regions: int = 4
    planar: bool = False
    fixed_set: int = 0
    checkpoint_every: int = 100
    use_sce: bool = True
    use_ce_pixelwise: bool = False
    sce_all_stages: bool = False
    use_excitation: bool = True
    recon_signal: str = "disparity"
    topk_literal_softmax: bool = False

    def __post_init__(self):
        self.validate()

    @property
    def v_max_resolved(self):
        """Upper variance clamp; 0 selects ``d_max / 2``."""
        return self.v_max if self.v_max > 0 else self.d_max / 2

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.d_max >= 4 and self.d_max % 4 == 0, "d_max must be a positive multiple of 4")
        need(self.crop_h >= 16 and self.crop_h % 16 == 0, "crop_h must be a positive multiple of 16")
        need(self.crop_w >= 16 and self.crop_w % 16 == 0, "crop_w must be a positive multiple of 16")
        need(self.d_max < self.crop_w / 4, "d_max must be < crop_w / 4 for synthetic scenes")
        need(self.cell_size >= 1, "cell_size must be >= 1")
        need(1 <= self.k <= self.d_max, "k must lie in [1, d_max]")
        need(self.lam >= 0 and self.mu >= 0 and self.w >= 0, "lam, mu and w must be >= 0")
        need(self.cost_mode in ("group_corr", "concat"), "cost_mode must be group_corr or concat")
        need(self.groups >= 1 and 32 % self.groups == 0, "groups must divide the 32 feature channels")
        need(self.stages >= 1, "stages must be >= 1")
        need(len(self.stage_weights) == self.stages, "stage_weights needs one entry per stage")
        need(all(x >= 0 for x in self.stage_weights), "stage_weights must be >= 0")
        need(self.lr > 0, "lr must be > 0")
        need(all(0 < m <= 1 for m in self.lr_milestones), "lr_milestones are fractions in (0, 1]")
        need(0 < self.lr_gamma <= 1, "lr_gamma must lie in (0, 1]")
        need(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "betas must lie in [0, 1)")
        need(self.adam_eps > 0, "adam_eps must be > 0")
        need(self.batch >= 1 and self.iters >= 1, "batch and iters must be >= 1")
        need(self.v_min > 0, "v_min must be > 0")
        need(self.v_max == 0 or self.v_max >= self.v_min, "v_max must be 0 (auto) or >= v_min")
        need(self.n_regions >= 1, "n_regions must be >= 1")
        need(self.fixed_set >= 0 and self.checkpoint_every >= 1, "fixed_set >= 0, checkpoint_every >= 1")
        need(self.recon_signal in ("disparity", "color"), "recon_signal must be disparity or color")
        need(not (self.use_sce and self.use_ce_pixelwise), "use_sce and use_ce_pixelwise are exclusive")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_lines(self):
        return [f"{f.name}={format_value(getattr(self, f.name))}" for f in fields(self)]

    def hash(self):
        """SHA-256 over every field except the resumable ones."""
        text = "\n".join(
            f"{f.name}={format_value(getattr(self, f.name))}" for f in fields(self) if f.name not in RESUMABLE
        )
        return hashlib.sha256(text.encode("utf-8")).digest()


_FIELD_TYPES = {f.name: getattr(f.type, "__name__", f.type) for f in fields(Config)}


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_value(key, text):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELD_TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(text)
            return low in ("true", "1", "yes", "on")
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "tuple":
            return tuple(float(x) for x in text.split(",") if x.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None


def parse_config_text(text):
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = parse_value(key, value)
    return values


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for key, text in (overrides or {}).items():
        values[key] = parse_value(key, text) if isinstance(text, str) else text
    return Config(**values)


def dump_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(cfg.to_lines()) + "\n")
