"""Line-oriented ``key = value`` run configuration.

One flat namespace covers dataset source, model/train/recovery settings,
distortion sweeps, and output location. Unknown keys are rejected so typos
fail loudly, and every command writes its fully resolved configuration next
to its outputs for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass


class ConfigError(ValueError):
    """Unparseable line, unknown key, or ill-typed value."""


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


# key -> (parser, default)
_SCHEMA: dict[str, tuple] = {
    "out": (str, "out"),
    "seed": (int, 0),
    "threads": (int, 1),
    # dataset
    "dataset": (str, "synthetic"),  # synthetic | idx
    "dataset.n": (int, 256),
    "dataset.side": (int, 32),
    "dataset.idx_images": (str, ""),
    "dataset.idx_labels": (str, ""),
    "dataset.pad_to_32": (_parse_bool, False),
    "split.n_train": (int, 128),
    # model
    "model": (str, "glo"),  # glo | gan | aegan
    "model.arch": (str, "mlp"),  # mlp | upconv
    "model.latent_dim": (int, 32),
    "model.hidden": (_parse_ints, (128, 256)),
    "disc.arch": (str, "mlp"),
    "disc.hidden": (_parse_ints, (128, 64)),
    "enc.hidden": (_parse_ints, (256, 128)),
    # training
    "train.epochs": (int, 50),
    "train.batch_size": (int, 32),
    "train.lr": (float, 2e-4),
    "train.beta1": (float, 0.5),
    "train.beta2": (float, 0.999),
    "train.adv_weight": (float, 0.1),
    # recovery
    "recover.optimizer": (str, "lbfgs"),
    "recover.max_iters": (int, 100),
    "recover.history": (int, 10),
    "recover.restarts": (int, 1),
    "recover.loss": (str, "l2"),
    "recover.sgd_lr": (float, 1.0),
    "recover.adam_lr": (float, 0.1),
    "recover.n_targets": (int, 64),
    # audit extras
    "audit.n_generated": (int, 0),
    "audit.distort": (str, "none"),  # none | warp | patch_noise | additive_noise
    "audit.bins": (int, 20),
    # distortion sweep
    "sweep.n_targets": (int, 16),
    # applications
    "checkpoint": (str, ""),
    "checkpoint.enc": (str, ""),
    "image": (str, ""),
    "target_index": (int, 0),
    "mask_rect": (_parse_ints, ()),  # top,left,height,width hole (hidden region)
    "pool_factor": (int, 4),
    # convergence protocol
    "convergence.n_targets": (int, 20),
    "convergence.n_inits": (int, 20),
    "convergence.iters": (int, 100),
}


@dataclass
class RunConfig:
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def override(self, key: str, value) -> None:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = value

    def resolved_text(self) -> str:
        lines = [f"{k} = {_format(self.values[k])}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str) -> RunConfig:
    values = {k: default for k, (_, default) in _SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        parser, _ = _SCHEMA[key]
        try:
            values[key] = parser(val)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {e}") from e
    return RunConfig(values)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
