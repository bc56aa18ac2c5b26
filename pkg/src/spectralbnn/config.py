"""Run configuration: one JSON document describes a whole run."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .model import ModelSpec
from .svi import AdamConfig, GuideConfig, TrainConfig

__all__ = ["ConfigError", "RunConfig", "digest"]

SCHEMA_VERSION = 1

_DATA_PATH_KEYS = ("images", "labels", "path", "sidecar")


class ConfigError(ValueError):
    pass


def digest(obj) -> str:
    """SHA-256 of the canonical JSON encoding of ``obj``."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _pick(section: dict, allowed, where: str) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    return dict(section)


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec = ModelSpec()
    guide: GuideConfig = GuideConfig()
    train: TrainConfig = TrainConfig()
    seed: int = 0
    data: dict = field(default_factory=dict)
    predictive_samples: int = 32
    cert_samples: int = 16
    cert_deltas: tuple = (0.1, 0.05, 0.01)
    ece_bins: int = 15
    sample_prior: dict = field(default_factory=dict)
    checkpoint: str | None = None
    base_dir: str = "."

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        doc = _pick(
            doc,
            ("schema_version", "model", "prior", "guide", "optim", "seed", "data", "mc",
             "eval", "certify", "sample_prior", "checkpoint"),
            "config",
        )
        version = doc.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported config schema_version {version}")
        model = _pick(doc.get("model", {}), ModelSpec.__dataclass_fields__, "model")
        prior = _pick(
            doc.get("prior", {}), ("sigma0_sq", "alpha", "base_prior_var", "alpha_prior_var"),
            "prior",
        )
        try:
            spec = ModelSpec(**model, **prior)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        guide = GuideConfig(**_pick(doc.get("guide", {}), GuideConfig.__dataclass_fields__, "guide"))
        optim = _pick(
            doc.get("optim", {}),
            ("lr", "beta1", "beta2", "adam_eps", "steps", "batch_size", "n_mc", "log_every"),
            "optim",
        )
        adam = AdamConfig(
            lr=optim.pop("lr", 1e-2),
            beta1=optim.pop("beta1", 0.9),
            beta2=optim.pop("beta2", 0.999),
            eps=optim.pop("adam_eps", 1e-8),
        )
        train = TrainConfig(adam=adam, guide=guide, **optim)
        if train.steps < 0 or train.batch_size < 1 or train.n_mc < 1:
            raise ConfigError("need steps >= 0, batch_size >= 1 and n_mc >= 1")
        mc = _pick(doc.get("mc", {}), ("predictive_samples", "cert_samples"), "mc")
        ev = _pick(doc.get("eval", {}), ("ece_bins",), "eval")
        cert = _pick(doc.get("certify", {}), ("deltas",), "certify")
        seed = doc.get("seed", 0)
        if not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        cfg = cls(
            model=spec,
            guide=guide,
            train=train,
            seed=seed,
            data=doc.get("data", {}),
            predictive_samples=int(mc.get("predictive_samples", 32)),
            cert_samples=int(mc.get("cert_samples", 16)),
            cert_deltas=tuple(float(d) for d in cert.get("deltas", (0.1, 0.05, 0.01))),
            ece_bins=int(ev.get("ece_bins", 15)),
            sample_prior=doc.get("sample_prior", {}),
            checkpoint=doc.get("checkpoint"),
            base_dir=str(base_dir),
        )
        cfg.check_paths()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(doc, base_dir=path.parent)

    def resolve(self, rel) -> Path:
        return Path(self.base_dir) / rel

    def datasets(self):
        """``(role, entry)`` pairs for every dataset in the config."""
        for role in ("train", "test"):
            if role in self.data:
                yield role, self.data[role]
        for i, entry in enumerate(self.data.get("ood", [])):
            yield f"ood[{i}]", entry

    def check_paths(self) -> None:
        for role, entry in self.datasets():
            for key in _DATA_PATH_KEYS:
                if key in entry and not self.resolve(entry[key]).exists():
                    raise ConfigError(f"data.{role}.{key}: {self.resolve(entry[key])} not found")

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)

    def to_dict(self) -> dict:
        t = self.train
        return {
            "schema_version": SCHEMA_VERSION,
            "model": self.model.to_dict(),
            "guide": asdict(self.guide),
            "optim": {
                "lr": t.adam.lr,
                "beta1": t.adam.beta1,
                "beta2": t.adam.beta2,
                "adam_eps": t.adam.eps,
                "steps": t.steps,
                "batch_size": t.batch_size,
                "n_mc": t.n_mc,
            },
            "seed": self.seed,
            "data": self.data,
            "mc": {"predictive_samples": self.predictive_samples, "cert_samples": self.cert_samples},
            "eval": {"ece_bins": self.ece_bins},
            "certify": {"deltas": list(self.cert_deltas)},
            "sample_prior": self.sample_prior,
            "checkpoint": self.checkpoint,
        }

    @property
    def digest(self) -> str:
        return digest(self.to_dict())

    @property
    def model_digest(self) -> str:
        """Digest of everything that fixes the meaning of the stored parameters."""
        return digest({"model": self.model.to_dict(), "guide": asdict(self.guide)})
