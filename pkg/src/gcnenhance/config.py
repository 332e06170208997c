"""Flat ``key = value`` configuration with documented defaults.

Precedence: command-line overrides (``--set key=value``) beat the config
file, which beats the built-in defaults below. Unknown keys are errors.
Lists are comma separated; room dimensions are written ``WxDxH``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.split(",") if v.strip())


def _words(s: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _rooms(s: str) -> tuple[tuple[float, float, float], ...]:
    rooms = []
    for item in _words(s):
        dims = tuple(float(v) for v in item.lower().split("x"))
        if len(dims) != 3:
            raise ValueError(f"room dims must be WxDxH, got {item!r}")
        rooms.append(dims)
    return tuple(rooms)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {options}, got {s!r}")
        return s

    return parse


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ", ".join("x".join(f"{d:g}" for d in room) for room in v)
        return ", ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
    return str(v)


@dataclass(frozen=True)
class Key:
    name: str
    default: Any
    parse: Callable[[str], Any]
    doc: str
    section: str


KEYS = [
    # stft
    Key("window_length", 1024, int, "STFT Hann window length (samples)", "stft"),
    Key("hop", 512, int, "STFT hop size (samples)", "stft"),
    Key("sample_rate", 16000, int, "audio sample rate (Hz); other rates are rejected", "stft"),
    # model
    Key("encoder_channels", (64, 128, 128, 256, 256, 256), _ints, "output channels of the encoder levels", "model"),
    Key("gcn_layers", 2, int, "number of graph convolution layers", "model"),
    Key("scorer_hidden", 128, int, "hidden width of the edge scorer", "model"),
    Key("ref_channel", 0, int, "reference microphone index", "model"),
    Key("gcn_enabled", True, _bool, "use the graph bottleneck (false = ablation without GCN)", "model"),
    # train
    Key("loss", "mag_raw", _choice("mag", "spec", "mag_spec", "mag_raw"), "training loss variant", "train"),
    Key("lr", 1e-5, float, "Adam learning rate (fixed)", "train"),
    Key("beta1", 0.9, float, "Adam beta1", "train"),
    Key("beta2", 0.999, float, "Adam beta2", "train"),
    Key("adam_eps", 1e-8, float, "Adam epsilon", "train"),
    Key("batch_size", 20, int, "spectrogram chunks per mini-batch", "train"),
    Key("chunk_len", 128, int, "STFT frames per training chunk (>= encoder minimum)", "train"),
    Key("steps", 20000, int, "maximum number of optimizer steps", "train"),
    Key("eval_every", 500, int, "steps between dev-loss evaluations (0 = never)", "train"),
    Key("checkpoint_every", 1000, int, "steps between periodic checkpoints (0 = never)", "train"),
    Key("patience", 10, int, "early stopping after this many evaluations without improvement (0 = off)", "train"),
    Key("grad_clip", 0.0, float, "gradient-norm clip (0 = off)", "train"),
    Key("seed", 0, int, "random seed for initialisation, batching and simulation", "train"),
    Key("threads", 1, int, "torch intra-op threads (1 keeps runs bit-reproducible)", "train"),
    # simulation
    Key("num_examples", 100, int, "examples to simulate per split", "sim"),
    Key("splits", ("train", "dev", "test"), _words, "splits to simulate", "sim"),
    Key("geometries", ("linear", "circular", "distributed"), _words, "array geometries drawn per example", "sim"),
    Key("mic_counts", (2, 4), _ints, "microphone counts drawn per example", "sim"),
    Key("snr_levels", (-7.5, -5.0, 0.0, 5.0, 7.5), _floats, "SNR levels (dB) drawn per example", "sim"),
    Key("rt60", 0.5, float, "reverberation time of every room (s)", "sim"),
    Key("room_dims", (), _rooms, "custom rooms WxDxH (empty = built-in split rooms)", "sim"),
    Key("utterance_seconds", 0.0, float, "crop speech to this length (0 = whole file)", "sim"),
    Key("mic_spacing", 0.05, float, "linear array inter-mic spacing (m)", "sim"),
    Key("array_radius", 0.1, float, "circular array radius (m)", "sim"),
    Key("wall_margin", 0.1, float, "minimum distance of mics/sources to walls (m)", "sim"),
    Key("min_source_distance", 0.5, float, "minimum source-to-mic distance (m)", "sim"),
    Key("clean_target", "direct", _choice("direct", "reverberant"), "clean target: direct path or reverberant image", "sim"),
    Key("absorption_model", "calibrated", _choice("calibrated", "sabine", "eyring"), "how wall absorption is derived from rt60", "sim"),
    Key("wav_format", "float32", _choice("float32", "pcm16"), "sample format of written WAV files", "sim"),
    Key("workers", 1, int, "parallel simulation workers", "sim"),
    # evaluation
    Key("metrics", ("stoi", "pesq", "sdr"), _words, "metrics to compute", "eval"),
    Key("pesq_cmd", "", str, "external PESQ command ({ref}/{deg} placeholders); empty = PESQ absent", "eval"),
    Key("max_frames", 4096, int, "frames per chunk when enhancing long recordings", "eval"),
    # paths (used by grid files)
    Key("train_manifest", "", str, "training manifest (ablation grids)", "paths"),
    Key("dev_manifest", "", str, "dev manifest (ablation grids)", "paths"),
    Key("out_dir", "", str, "output directory (ablation grids)", "paths"),
]
KEY_MAP = {k.name: k for k in KEYS}
GRID_PREFIX = "grid."


def defaults() -> dict[str, Any]:
    return {k.name: k.default for k in KEYS}


def parse_value(name: str, raw: str) -> Any:
    key = KEY_MAP.get(name)
    if key is None:
        raise ConfigError(f"unknown config key {name!r}")
    try:
        return key.parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name!r}: {exc}") from None


def read_pairs(path) -> list[tuple[str, str, int]]:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        name, raw = (s.strip() for s in line.split("=", 1))
        pairs.append((name, raw, lineno))
    return pairs


def load_config(path=None, overrides=()) -> dict[str, Any]:
    """Effective configuration from defaults, an optional file and overrides."""
    cfg = defaults()
    if path:
        for name, raw, lineno in read_pairs(path):
            if name not in KEY_MAP:
                raise ConfigError(f"{path}:{lineno}: unknown config key {name!r}")
            cfg[name] = parse_value(name, raw)
    apply_overrides(cfg, overrides)
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        name, raw = (s.strip() for s in item.split("=", 1))
        cfg[name] = parse_value(name, raw)
    return cfg


def load_grid(path, overrides=()) -> tuple[dict[str, Any], str, list[str]]:
    """Read an ablation grid file.

    A grid file is a config file plus exactly one ``grid.<key> = v1; v2; ...``
    line naming the varied key. Returns (base config, axis key, raw values).
    """
    cfg = defaults()
    axis, values = None, None
    for name, raw, lineno in read_pairs(path):
        if name.startswith(GRID_PREFIX):
            if axis is not None:
                raise ConfigError(f"{path}:{lineno}: only one grid axis is supported")
            axis = name[len(GRID_PREFIX):]
            if axis not in KEY_MAP:
                raise ConfigError(f"{path}:{lineno}: unknown config key {axis!r}")
            values = [v.strip() for v in raw.split(";") if v.strip()]
            for v in values:
                parse_value(axis, v)
        else:
            if name not in KEY_MAP:
                raise ConfigError(f"{path}:{lineno}: unknown config key {name!r}")
            cfg[name] = parse_value(name, raw)
    if axis is None:
        raise ConfigError(f"{path}: no 'grid.<key> = a; b' line found")
    apply_overrides(cfg, overrides)
    return cfg, axis, values


def render(cfg: dict) -> str:
    return "\n".join(f"{k.name} = {_fmt(cfg[k.name])}" for k in KEYS)


def describe() -> str:
    """All keys with defaults and documentation, grouped by section."""
    lines, section = [], None
    for k in KEYS:
        if k.section != section:
            section = k.section
            lines.append(f"[{section}]")
        lines.append(f"  {k.name} = {_fmt(k.default)}    # {k.doc}")
    return "\n".join(lines)


# builders ------------------------------------------------------------------


def stft_params(cfg: dict):
    from .signal import StftParams

    return StftParams(cfg["window_length"], cfg["hop"], cfg["sample_rate"])


def model_config(cfg: dict):
    from .model import ModelConfig

    return ModelConfig(
        encoder_channels=cfg["encoder_channels"],
        gcn_layers=cfg["gcn_layers"],
        scorer_hidden=cfg["scorer_hidden"],
        ref_channel=cfg["ref_channel"],
        gcn_enabled=cfg["gcn_enabled"],
    )


def train_config(cfg: dict):
    from .train import TrainConfig

    return TrainConfig(
        loss=cfg["loss"], lr=cfg["lr"], beta1=cfg["beta1"], beta2=cfg["beta2"], eps=cfg["adam_eps"],
        batch_size=cfg["batch_size"], chunk_len=cfg["chunk_len"], steps=cfg["steps"],
        eval_every=cfg["eval_every"], checkpoint_every=cfg["checkpoint_every"], patience=cfg["patience"],
        grad_clip=cfg["grad_clip"], seed=cfg["seed"], threads=cfg["threads"],
    )


def sim_config(cfg: dict):
    from .acoustics import SimConfig

    return SimConfig(
        num_examples=cfg["num_examples"], splits=cfg["splits"], geometries=cfg["geometries"],
        mic_counts=cfg["mic_counts"], snr_levels=cfg["snr_levels"], rt60=cfg["rt60"],
        utterance_seconds=cfg["utterance_seconds"], mic_spacing=cfg["mic_spacing"],
        array_radius=cfg["array_radius"], wall_margin=cfg["wall_margin"],
        min_source_distance=cfg["min_source_distance"], clean_target=cfg["clean_target"],
        absorption_model=cfg["absorption_model"], room_dims=cfg["room_dims"],
        ref_channel=cfg["ref_channel"], sample_rate=cfg["sample_rate"], wav_format=cfg["wav_format"],
        seed=cfg["seed"], workers=cfg["workers"],
    )
