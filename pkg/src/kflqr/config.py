"""Experiment configuration: a flat key=value text format with includes.

Lines are `key = value` with `#` comments; `include other.cfg` splices
another file (relative to the including file) with later keys overriding
earlier ones.  Dotted keys group settings by stage (data.*, train.*,
eval.*, lqr.*).  Values are parsed as bool/int/float/comma-list with a
string fallback.

One master seed drives the whole pipeline; stage seeds are derived from
it at fixed offsets so regenerating any stage is reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .training import Hyperparams


class ConfigError(ValueError):
    pass


def _parse_value(text):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "yes", "on"):
        return True
    if lowered in ("false", "no", "off"):
        return False
    if "," in text:
        return tuple(_parse_value(part) for part in text.split(","))
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def parse_config_text(text, base_dir=".", out=None):
    out = {} if out is None else out
    base_dir = Path(base_dir)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("include "):
            target = base_dir / line[len("include ") :].strip()
            if not target.exists():
                raise ConfigError(f"line {lineno}: include target {target} not found")
            parse_config_text(target.read_text(), target.parent, out)
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config_text(path.read_text(), path.parent)


def config_hash(cfg):
    """Stable hash of the fully resolved configuration."""
    canon = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# Seed offsets: every stage derives its generator from the master seed so
# one value pins the full pipeline.
SEED_TRAIN = 1
SEED_LQR_ICS = 2
SEED_DATA = 1_000
SEED_EVAL = 1_000_000


def _get(cfg, key, default=None, required=False):
    if key in cfg:
        return cfg[key]
    if required:
        raise ConfigError(f"missing required config key '{key}'")
    return default


def _tuple_of(value):
    return value if isinstance(value, tuple) else (value,)


@dataclass(frozen=True)
class DataSpec:
    dt: float
    horizon: float
    ic_count: int
    ic_layout: str  # edge | grid
    amp_range: tuple
    hold_range: tuple
    mode: str
    unforced_twin: bool
    equilibrium_records: int  # extra (x*, 0, 0) anchor records appended


@dataclass(frozen=True)
class EvalSpec:
    horizon: float
    n_trajectories: int
    plot_count: int


@dataclass(frozen=True)
class LQRSpec:
    q_diag: tuple
    r_diag: tuple
    eps_ridge: float
    recenter: bool
    horizon: float
    dt: float
    ic_count: int
    contraction: float


@dataclass(frozen=True)
class ExperimentConfig:
    plant: str
    seed: int
    data: DataSpec
    hyper: Hyperparams
    eval: EvalSpec
    lqr: LQRSpec
    raw: dict

    @property
    def hash(self):
        return config_hash(self.raw)


def experiment_config(cfg, seed_override=None):
    """Typed view of a parsed config dict (spec module defaults filled in)."""
    seed = int(_get(cfg, "seed", 0) if seed_override is None else seed_override)
    plant = _get(cfg, "plant", required=True)
    data = DataSpec(
        dt=float(_get(cfg, "data.dt", 0.025)),
        horizon=float(_get(cfg, "data.horizon", 5.0)),
        ic_count=int(_get(cfg, "data.ic_count", 50)),
        ic_layout=_get(cfg, "data.ic_layout", "edge"),
        amp_range=(
            float(_get(cfg, "data.amp_lo", -1.0)),
            float(_get(cfg, "data.amp_hi", 1.0)),
        ),
        hold_range=(
            float(_get(cfg, "data.hold_lo", 0.025)),
            float(_get(cfg, "data.hold_hi", 0.1)),
        ),
        mode=_get(cfg, "data.mode", "exact"),
        unforced_twin=bool(_get(cfg, "data.unforced_twin", False)),
        equilibrium_records=int(_get(cfg, "data.equilibrium_records", 0)),
    )
    batch = int(_get(cfg, "train.batch_size", 0))
    hyper = Hyperparams(
        p_bar=int(_get(cfg, "train.p_bar", 10)),
        epochs=int(_get(cfg, "train.epochs", 10_000)),
        learning_rate=float(_get(cfg, "train.learning_rate", 1e-3)),
        beta1=float(_get(cfg, "train.beta1", 0.9)),
        beta2=float(_get(cfg, "train.beta2", 0.999)),
        eps=float(_get(cfg, "train.eps", 1e-8)),
        batch_size=None if batch == 0 else batch,
        w_pred=float(_get(cfg, "train.w_pred", 1.0)),
        w_rec=float(_get(cfg, "train.w_rec", 1.0)),
        w_se=float(_get(cfg, "train.w_se", 1.0)),
        seed=seed + SEED_TRAIN,
        squash=bool(_get(cfg, "train.squash", True)),
        hidden=tuple(int(h) for h in _tuple_of(_get(cfg, "train.hidden", (120, 120, 120)))),
        n_coupling_layers=int(_get(cfg, "train.coupling_layers", 7)),
        mode=_get(cfg, "train.mode", "joint"),
    )
    eval_spec = EvalSpec(
        horizon=float(_get(cfg, "eval.horizon", 2.0)),
        n_trajectories=int(_get(cfg, "eval.n_trajectories", 200)),
        plot_count=int(_get(cfg, "eval.plot_count", 3)),
    )
    lqr_spec = LQRSpec(
        q_diag=tuple(float(v) for v in _tuple_of(_get(cfg, "lqr.q", 10.0))),
        r_diag=tuple(float(v) for v in _tuple_of(_get(cfg, "lqr.r", 1.0))),
        eps_ridge=float(_get(cfg, "lqr.eps_ridge", 1e-9)),
        recenter=bool(_get(cfg, "lqr.recenter", True)),
        horizon=float(_get(cfg, "lqr.horizon", 10.0)),
        dt=float(_get(cfg, "lqr.dt", 0.005)),
        ic_count=int(_get(cfg, "lqr.ic_count", 50)),
        contraction=float(_get(cfg, "lqr.contraction", 0.95)),
    )
    return ExperimentConfig(
        plant=plant,
        seed=seed,
        data=data,
        hyper=hyper,
        eval=eval_spec,
        lqr=lqr_spec,
        raw=dict(cfg),
    )
