"""Run configuration: a sectioned key/value file parsed with `configparser`,
validated strictly (unknown sections or keys are rejected), and re-emitted
with every default materialized so a run can be reproduced from its resolved
copy alone.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .data import AnomalySpec, DataError, SynthSpec
from .training import LossWeights, TrainConfig


class ConfigError(ValueError):
    """Malformed, unknown, or inconsistent configuration input."""


@dataclass(frozen=True)
class ModelSection:
    hidden: int = 32
    mlp_hidden: tuple[int, ...] = (32,)
    reverse_reconstruction: bool = True

    def __post_init__(self):
        if self.hidden < 1:
            raise ConfigError(f"model.hidden must be positive, got {self.hidden}")


@dataclass(frozen=True)
class DataSection:
    source: str = "synth"
    daphnet_files: tuple[str, ...] = ()
    series_csv: str = ""
    labels_csv: str = ""
    window: int = 64
    horizon: int = 8
    train_stride: int = 8
    eval_stride: int = 1
    train_ratio: float = 0.6
    val_ratio: float = 0.2
    test_ratio: float = 0.2
    decimate: int = 1

    def __post_init__(self):
        if self.source not in ("synth", "csv", "daphnet"):
            raise ConfigError(f"data.source must be synth, csv or daphnet, got {self.source!r}")
        if self.window < 2 or self.horizon < 1:
            raise ConfigError("data.window must be >= 2 and data.horizon >= 1")
        if self.train_stride < 1 or self.eval_stride < 1 or self.decimate < 1:
            raise ConfigError("strides and decimate must be >= 1")
        ratios = (self.train_ratio, self.val_ratio, self.test_ratio)
        if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must be positive and sum to 1, got {ratios}")

    @property
    def ratios(self) -> tuple[float, float, float]:
        return (self.train_ratio, self.val_ratio, self.test_ratio)


@dataclass(frozen=True)
class DetectionSection:
    mode: str = "best_f1"
    percentile: float = 99.0
    tau: float | None = None
    score_mode: str = "weighted"

    def __post_init__(self):
        if self.mode not in ("best_f1", "percentile"):
            raise ConfigError(f"detection.mode must be best_f1 or percentile, got {self.mode!r}")
        if self.score_mode not in ("weighted", "max"):
            raise ConfigError(
                f"detection.score_mode must be weighted or max, got {self.score_mode!r}"
            )
        if not 0.0 <= self.percentile <= 100.0:
            raise ConfigError(f"detection.percentile must be in [0, 100], got {self.percentile}")


@dataclass(frozen=True)
class SynthSection:
    m: int = 6
    t: int = 20000
    seed: int = 0
    noise_sigma: float = 0.05
    base_freqs: tuple[float, ...] = (0.013, 0.021, 0.034)
    anomalies: tuple[AnomalySpec, ...] = ()

    def spec(self) -> SynthSpec:
        try:
            return SynthSpec(
                m=self.m,
                t=self.t,
                base_freqs=self.base_freqs,
                noise_sigma=self.noise_sigma,
                anomalies=self.anomalies,
            )
        except DataError as err:
            raise ConfigError(f"invalid synth section: {err}") from err


@dataclass(frozen=True)
class GradcheckSection:
    m: int = 3
    window: int = 8
    horizon: int = 2
    hidden: int = 5
    mlp_hidden: tuple[int, ...] = (4,)


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossWeights = field(default_factory=LossWeights)
    training: TrainConfig = field(default_factory=TrainConfig)
    data: DataSection = field(default_factory=DataSection)
    detection: DetectionSection = field(default_factory=DetectionSection)
    synth: SynthSection = field(default_factory=SynthSection)
    gradcheck: GradcheckSection = field(default_factory=GradcheckSection)


_KNOWN_KEYS = {
    "model": ("hidden", "mlp_hidden", "reverse_reconstruction"),
    "loss": ("alpha", "beta", "gamma"),
    "training": (
        "learning_rate",
        "epochs",
        "batch_size",
        "seed",
        "beta1",
        "beta2",
        "eps",
        "patience",
        "clip_norm",
    ),
    "data": (
        "source",
        "daphnet_files",
        "series_csv",
        "labels_csv",
        "window",
        "horizon",
        "train_stride",
        "eval_stride",
        "train_ratio",
        "val_ratio",
        "test_ratio",
        "decimate",
    ),
    "detection": ("mode", "percentile", "tau", "score_mode"),
    "synth": ("m", "t", "seed", "noise_sigma", "base_freqs", "anomalies"),
    "gradcheck": ("m", "window", "horizon", "hidden", "mlp_hidden"),
}


def _typed(section: str, key: str, raw: str, kind, default):
    raw = raw.strip()
    if raw == "":
        return default
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def _int_list(section: str, key: str, raw: str) -> tuple[int, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(_typed(section, key, tok, int, None) for tok in raw.replace(",", " ").split())


def _float_list(section: str, key: str, raw: str) -> tuple[float, ...]:
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(_typed(section, key, tok, float, None) for tok in raw.replace(",", " ").split())


def _str_list(raw: str) -> tuple[str, ...]:
    tokens = []
    for line in raw.splitlines():
        tokens.extend(part for part in line.replace(",", " ").split() if part)
    return tuple(tokens)


def parse_anomalies(raw: str) -> tuple[AnomalySpec, ...]:
    """Each non-empty line is ``kind start end [channel]``."""
    specs = []
    for line in raw.splitlines():
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) not in (3, 4):
            raise ConfigError(
                f"[synth] anomalies: expected 'kind start end [channel]', got {line.strip()!r}"
            )
        kind = tokens[0]
        try:
            start, end = int(tokens[1]), int(tokens[2])
            channel = int(tokens[3]) if len(tokens) == 4 else 0
        except ValueError:
            raise ConfigError(f"[synth] anomalies: non-integer bounds in {line.strip()!r}") from None
        try:
            specs.append(AnomalySpec(kind=kind, start=start, end=end, channel=channel))
        except DataError as err:
            raise ConfigError(f"[synth] anomalies: {err}") from err
    return tuple(specs)


def load_config(path) -> RunConfig:
    """Parse and validate a config file, filling every omitted key with its
    default. Unknown sections or keys are rejected by name."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except configparser.Error as err:
        raise ConfigError(f"malformed config {path}: {err}") from err

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")

    def get(section, key, kind, default):
        if not parser.has_option(section, key):
            return default
        return _typed(section, key, parser.get(section, key), kind, default)

    try:
        model = ModelSection(
            hidden=get("model", "hidden", int, 32),
            mlp_hidden=(
                _int_list("model", "mlp_hidden", parser.get("model", "mlp_hidden"))
                if parser.has_option("model", "mlp_hidden")
                else (32,)
            ),
            reverse_reconstruction=get("model", "reverse_reconstruction", bool, True),
        )
        loss = LossWeights(
            alpha=get("loss", "alpha", float, 1.0),
            beta=get("loss", "beta", float, 1.0),
            gamma=get("loss", "gamma", float, 1.0),
        )
        training = TrainConfig(
            learning_rate=get("training", "learning_rate", float, 1e-3),
            epochs=get("training", "epochs", int, 50),
            batch_size=get("training", "batch_size", int, 64),
            seed=get("training", "seed", int, 0),
            beta1=get("training", "beta1", float, 0.9),
            beta2=get("training", "beta2", float, 0.999),
            eps=get("training", "eps", float, 1e-8),
            patience=get("training", "patience", int, 10),
            clip_norm=get("training", "clip_norm", float, 5.0),
        )
        data = DataSection(
            source=get("data", "source", str, "synth"),
            daphnet_files=(
                _str_list(parser.get("data", "daphnet_files"))
                if parser.has_option("data", "daphnet_files")
                else ()
            ),
            series_csv=get("data", "series_csv", str, ""),
            labels_csv=get("data", "labels_csv", str, ""),
            window=get("data", "window", int, 64),
            horizon=get("data", "horizon", int, 8),
            train_stride=get("data", "train_stride", int, 8),
            eval_stride=get("data", "eval_stride", int, 1),
            train_ratio=get("data", "train_ratio", float, 0.6),
            val_ratio=get("data", "val_ratio", float, 0.2),
            test_ratio=get("data", "test_ratio", float, 0.2),
            decimate=get("data", "decimate", int, 1),
        )
        tau_raw = parser.get("detection", "tau", fallback="").strip()
        detect = DetectionSection(
            mode=get("detection", "mode", str, "best_f1"),
            percentile=get("detection", "percentile", float, 99.0),
            tau=float(tau_raw) if tau_raw else None,
            score_mode=get("detection", "score_mode", str, "weighted"),
        )
        synth = SynthSection(
            m=get("synth", "m", int, 6),
            t=get("synth", "t", int, 20000),
            seed=get("synth", "seed", int, 0),
            noise_sigma=get("synth", "noise_sigma", float, 0.05),
            base_freqs=(
                _float_list("synth", "base_freqs", parser.get("synth", "base_freqs"))
                if parser.has_option("synth", "base_freqs")
                else (0.013, 0.021, 0.034)
            ),
            anomalies=(
                parse_anomalies(parser.get("synth", "anomalies"))
                if parser.has_option("synth", "anomalies")
                else ()
            ),
        )
        gradcheck = GradcheckSection(
            m=get("gradcheck", "m", int, 3),
            window=get("gradcheck", "window", int, 8),
            horizon=get("gradcheck", "horizon", int, 2),
            hidden=get("gradcheck", "hidden", int, 5),
            mlp_hidden=(
                _int_list("gradcheck", "mlp_hidden", parser.get("gradcheck", "mlp_hidden"))
                if parser.has_option("gradcheck", "mlp_hidden")
                else (4,)
            ),
        )
    except ValueError as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(str(err)) from err

    return RunConfig(
        model=model,
        loss=loss,
        training=training,
        data=data,
        detection=detect,
        synth=synth,
        gradcheck=gradcheck,
    )


def default_config() -> RunConfig:
    return RunConfig()


def resolve_seed(config: RunConfig, seed: int | None) -> RunConfig:
    """Apply a command-line seed override to both training and synthesis."""
    if seed is None:
        return config
    from dataclasses import replace

    return RunConfig(
        model=config.model,
        loss=config.loss,
        training=replace(config.training, seed=seed),
        data=config.data,
        detection=config.detection,
        synth=replace(config.synth, seed=seed),
        gradcheck=config.gradcheck,
    )


def render_config(config: RunConfig) -> str:
    """Serialize with every key explicit; the output parses back identically."""
    parser = configparser.ConfigParser(interpolation=None)
    parser["model"] = {
        "hidden": str(config.model.hidden),
        "mlp_hidden": " ".join(str(v) for v in config.model.mlp_hidden),
        "reverse_reconstruction": str(config.model.reverse_reconstruction).lower(),
    }
    parser["loss"] = {
        "alpha": repr(config.loss.alpha),
        "beta": repr(config.loss.beta),
        "gamma": repr(config.loss.gamma),
    }
    parser["training"] = {
        "learning_rate": repr(config.training.learning_rate),
        "epochs": str(config.training.epochs),
        "batch_size": str(config.training.batch_size),
        "seed": str(config.training.seed),
        "beta1": repr(config.training.beta1),
        "beta2": repr(config.training.beta2),
        "eps": repr(config.training.eps),
        "patience": str(config.training.patience),
        "clip_norm": repr(config.training.clip_norm),
    }
    parser["data"] = {
        "source": config.data.source,
        "daphnet_files": " ".join(config.data.daphnet_files),
        "series_csv": config.data.series_csv,
        "labels_csv": config.data.labels_csv,
        "window": str(config.data.window),
        "horizon": str(config.data.horizon),
        "train_stride": str(config.data.train_stride),
        "eval_stride": str(config.data.eval_stride),
        "train_ratio": repr(config.data.train_ratio),
        "val_ratio": repr(config.data.val_ratio),
        "test_ratio": repr(config.data.test_ratio),
        "decimate": str(config.data.decimate),
    }
    parser["detection"] = {
        "mode": config.detection.mode,
        "percentile": repr(config.detection.percentile),
        "tau": "" if config.detection.tau is None else repr(config.detection.tau),
        "score_mode": config.detection.score_mode,
    }
    anomaly_lines = "".join(
        f"\n{a.kind} {a.start} {a.end} {a.channel}" for a in config.synth.anomalies
    )
    parser["synth"] = {
        "m": str(config.synth.m),
        "t": str(config.synth.t),
        "seed": str(config.synth.seed),
        "noise_sigma": repr(config.synth.noise_sigma),
        "base_freqs": " ".join(repr(f) for f in config.synth.base_freqs),
        "anomalies": anomaly_lines,
    }
    parser["gradcheck"] = {
        "m": str(config.gradcheck.m),
        "window": str(config.gradcheck.window),
        "horizon": str(config.gradcheck.horizon),
        "hidden": str(config.gradcheck.hidden),
        "mlp_hidden": " ".join(str(v) for v in config.gradcheck.mlp_hidden),
    }
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def write_resolved(config: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(render_config(config))
