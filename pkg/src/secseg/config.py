"""JSON run configuration: one document covering network, training, CRFs, decays and data.

A document names a ``preset`` and overrides any subset of its sections.
``resolve`` fills in every default so a saved config is self-describing.
Unknown keys anywhere are an error.
"""

import copy
from dataclasses import dataclass, fields

from .cues import UNLABELED
from .datagen import SynthConfig
from .densecrf import CrfConfig
from .network import NetConfig, default_config
from .pooling import DecayParams
from .trainer import FULL_SCHEDULE, TrainConfig

PRESETS = ("toy", "full-schedule")
_TRAIN_KEYS = ("iterations", "batch_size", "lr0", "lr_drop_factor", "lr_drop_every", "weight_decay",
               "momentum", "rng_seed", "terms", "pooling")
_CUE_DEFAULTS = {"fg_ratio": 0.2, "bg_fraction": 0.1, "median_window": 3}
_EXPERIMENT_DEFAULTS = {"train_count": 200, "eval_crf": False}


class ConfigError(ValueError):
    pass


def _train_defaults():
    t = TrainConfig()
    d = {k: getattr(t, k) for k in _TRAIN_KEYS}
    d["terms"] = sorted(d["terms"])
    return d


def preset(name):
    """Fully enumerated document for a preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    synth = SynthConfig()
    doc = {
        "preset": name,
        "net": default_config(synth.classes).to_dict(),
        "train": _train_defaults(),
        "crf": TrainConfig().crf.as_dict(),
        "test_crf": CrfConfig().as_dict(),
        "decay": None,
        "synth": synth.to_dict(),
        "cues": dict(_CUE_DEFAULTS),
        "experiment": dict(_EXPERIMENT_DEFAULTS),
    }
    if name == "full-schedule":
        doc["train"].update(FULL_SCHEDULE)
    return doc


def _merge(base, override, where):
    if not isinstance(override, dict):
        raise ConfigError(f"{where}: expected an object")
    out = dict(base)
    for k, v in override.items():
        if k not in base:
            raise ConfigError(f"{where}: unknown key {k!r}")
        out[k] = v
    return out


def resolve(doc):
    """Merge a (possibly partial) document onto its preset and validate it."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = copy.deepcopy(doc)
    base = preset(doc.pop("preset", "toy"))
    for key, value in doc.items():
        if key not in base:
            raise ConfigError(f"unknown config section {key!r}")
        if key == "decay":
            if value is not None:
                value = _merge({"d_plus": None, "d_minus": 0.0, "d_bg": None}, value, "decay")
            base[key] = value
        else:
            base[key] = _merge(base[key], value, key)
    return RunConfig.from_dict(base)


@dataclass(frozen=True)
class RunConfig:
    preset: str
    net: NetConfig
    train: TrainConfig
    test_crf: CrfConfig
    synth: SynthConfig
    cues: dict
    experiment: dict

    @classmethod
    def from_dict(cls, d):
        try:
            net = NetConfig.from_dict(d["net"])
            crf = CrfConfig(**d["crf"])
            test_crf = CrfConfig(**d["test_crf"])
            decay = None
            if d["decay"] is not None:
                if d["decay"]["d_plus"] is None or d["decay"]["d_bg"] is None:
                    raise ConfigError("decay needs d_plus and d_bg (or null to solve them)")
                decay = DecayParams(**d["decay"])
            train = TrainConfig(crf=crf, decay=decay, **d["train"])
            synth = SynthConfig.from_dict(d["synth"])
        except TypeError as e:
            raise ConfigError(str(e)) from None
        if net.classes != synth.classes:
            raise ConfigError(f"net predicts {net.classes} classes but the data has {synth.classes}")
        if net.classes >= UNLABELED:
            raise ConfigError(f"at most {UNLABELED - 1} classes fit the 8-bit cue format")
        cues = dict(d["cues"])
        if not 0 < cues["fg_ratio"] < 1:
            raise ConfigError("cues.fg_ratio must lie in (0, 1)")
        if not 0 < cues["bg_fraction"] < 1:
            raise ConfigError("cues.bg_fraction must lie in (0, 1)")
        exp = dict(d["experiment"])
        if int(exp["train_count"]) < 1:
            raise ConfigError("experiment.train_count must be >= 1")
        return cls(d["preset"], net, train, test_crf, synth, cues, exp)

    def to_dict(self):
        t = self.train
        train = {k: getattr(t, k) for k in _TRAIN_KEYS}
        train["terms"] = sorted(train["terms"])
        decay = None
        if t.decay is not None:
            decay = {f.name: getattr(t.decay, f.name) for f in fields(t.decay)}
        return {
            "preset": self.preset,
            "net": self.net.to_dict(),
            "train": train,
            "crf": t.crf.as_dict(),
            "test_crf": self.test_crf.as_dict(),
            "decay": decay,
            "synth": self.synth.to_dict(),
            "cues": dict(self.cues),
            "experiment": dict(self.experiment),
        }
