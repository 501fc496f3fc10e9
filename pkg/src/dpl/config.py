"""Training hyper-parameters and the flat ``key = value`` config format."""
import os
from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    pass


@dataclass
class HyperParams:
    delta: float = 0.3  # label-correction margin
    mpt_threshold: float = 0.9  # pseudo-label confidence threshold
    alpha: float = 0.5  # path-T weight when fusing probability maps
    lambda_adv: float = 1e-3
    lambda_recon: float = 10.0
    lambda_dualper: float = 0.1
    n_iters: int = 1  # DPAS iterations
    lr_seg: float = 2.0
    lr_trans: float = 0.01
    lr_disc: float = 0.3
    lr_feat_disc: float = 0.1
    seed: int = 0

    def validate(self):
        if self.delta < 0:
            raise ConfigError("delta must be >= 0")
        if not 0 <= self.mpt_threshold <= 1:
            raise ConfigError("mpt_threshold must lie in [0, 1]")
        if not 0 <= self.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.n_iters < 1:
            raise ConfigError("n_iters must be >= 1")
        for name in ("lambda_adv", "lambda_recon", "lambda_dualper",
                     "lr_seg", "lr_trans", "lr_disc", "lr_feat_disc"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")


_CHOICES = {
    "refresh": ("per-epoch", "fixed-once"),
    "strategy": ("weighted", "max", "joint", "spplg"),
    "warmup_labels": ("corrected", "gt", "pseudo"),
    "perceptual": ("dual", "single"),
    "ce_normalize": ("pixels", "labeled"),
}


@dataclass
class TrainConfig:
    hp: HyperParams = field(default_factory=HyperParams)
    epochs_warmup_s: int = 20
    epochs_naive: int = 30  # translator pair used for the target warm-up
    epochs_warmup_t: int = 10
    epochs_dpit: int = 30
    epochs_dpas: int = 10
    batch_size: int = 20
    disc_steps: int = 1  # discriminator updates per generator update
    refresh: str = "per-epoch"
    strategy: str = "weighted"
    warmup_labels: str = "corrected"
    perceptual: str = "dual"
    ce_normalize: str = "pixels"
    data_dir: str = "data"
    out_dir: str = "runs/default"

    def validate(self):
        self.hp.validate()
        for name in ("epochs_warmup_s", "epochs_naive", "epochs_warmup_t", "epochs_dpit",
                     "epochs_dpas", "batch_size", "disc_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name, allowed in _CHOICES.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        return self

    def with_hp(self, **kw):
        return replace(self, hp=replace(self.hp, **kw))


_HP_FIELDS = {f.name: f.type for f in fields(HyperParams)}
_CFG_FIELDS = {f.name: f.type for f in fields(TrainConfig) if f.name != "hp"}


def _convert(key, typ, raw):
    typ = {"int": int, "float": float, "str": str}.get(typ, typ)
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config(text, base=None):
    """Parse ``key = value`` lines on top of ``base`` (defaults if omitted).

    Blank lines and ``#`` comments are skipped; unknown keys are an error.
    """
    cfg = base or TrainConfig()
    hp_kw, cfg_kw = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in _HP_FIELDS:
            hp_kw[key] = _convert(key, _HP_FIELDS[key], value)
        elif key in _CFG_FIELDS:
            cfg_kw[key] = _convert(key, _CFG_FIELDS[key], value)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    cfg = replace(cfg, hp=replace(cfg.hp, **hp_kw), **cfg_kw)
    return cfg.validate()


def load_config(path=None, seed=None, env=None):
    """Config from file, then ``DPL_SEED`` from the environment, then ``seed``."""
    cfg = TrainConfig()
    if path is not None:
        with open(path) as fh:
            cfg = parse_config(fh.read())
    env = os.environ if env is None else env
    if env.get("DPL_SEED"):
        cfg = cfg.with_hp(seed=_convert("DPL_SEED", int, env["DPL_SEED"]))
    if seed is not None:
        cfg = cfg.with_hp(seed=seed)
    return cfg.validate()


def dump_config(cfg):
    lines = [f"{name} = {getattr(cfg.hp, name)}" for name in _HP_FIELDS]
    lines += [f"{name} = {getattr(cfg, name)}" for name in _CFG_FIELDS]
    return "\n".join(lines) + "\n"
