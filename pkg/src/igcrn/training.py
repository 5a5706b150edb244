"""Deterministic training loop with per-epoch checkpoints and exact resume.

Randomness is drawn from generators seeded by ``(seed, epoch)``, so an
interrupted run resumed from its last checkpoint follows the same
trajectory as an uninterrupted one.
"""

from __future__ import annotations

import glob
import json
import os
import re
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import read_checkpoint, restore, save_checkpoint
from .dataset import DataError, read_manifest
from .dsp import StftConfig
from .inference import REFERENCE_CHANNEL, make_batch
from .model import IGCRN, ModelConfig, compressed_loss, recover_spectrum
from .nn import ConfigError
from .optim import Adam
from .tensor import NumericError, Tensor, no_grad
from .wavio import read_wav

LOSS_LOG = "loss_log.jsonl"
_CKPT_RE = re.compile(r"epoch_(\d+)\.ckpt$")


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 2e-4
    batch_size: int = 4
    epochs: int = 10
    crop_seconds: float = 4.0
    seed: int = 0
    # step schedule: the rate is multiplied by lr_drop_factor from each listed epoch on
    lr_drop_epochs: tuple[int, ...] = ()
    lr_drop_factor: float = 0.3

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.crop_seconds <= 0 or self.lr <= 0:
            raise ConfigError("batch_size, epochs, crop_seconds and lr must be positive")
        if not 0 < self.lr_drop_factor <= 1 or any(e < 1 for e in self.lr_drop_epochs):
            raise ConfigError("lr_drop_factor must be in (0, 1] and lr_drop_epochs must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_drop_factor ** sum(epoch >= e for e in self.lr_drop_epochs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["lr_drop_epochs"] = list(self.lr_drop_epochs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("model"), dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        if "lr_drop_epochs" in d:
            d["lr_drop_epochs"] = tuple(int(e) for e in d["lr_drop_epochs"])
        return cls(**d)


def load_split(data_dir: str, split: str) -> tuple[list[dict], list[np.ndarray], list[np.ndarray]]:
    """Records, ``[2, N]`` noisy waves and reference-channel clean waves of one split."""
    records = read_manifest(data_dir, split)
    noisy, clean = [], []
    for rec in records:
        for key in ("noisy_path", "clean_path"):
            if not os.path.exists(os.path.join(data_dir, rec[key])):
                raise DataError(f"missing file {rec[key]} for record {rec['id']}")
        x, fs = read_wav(os.path.join(data_dir, rec["noisy_path"]))
        c, _ = read_wav(os.path.join(data_dir, rec["clean_path"]))
        if x.shape[0] != 2:
            raise DataError(f"{rec['noisy_path']}: expected 2 channels, got {x.shape[0]}")
        noisy.append(x.astype(np.float32))
        clean.append(c[REFERENCE_CHANNEL].astype(np.float32))
    return records, noisy, clean


def crop_or_pad(x: np.ndarray, length: int, offset: int) -> np.ndarray:
    n = x.shape[-1]
    if n >= length:
        return x[..., offset: offset + length]
    out = np.zeros(x.shape[:-1] + (length,), dtype=x.dtype)
    out[..., :n] = x
    return out


def batch_loss(model: IGCRN, noisy: np.ndarray, clean: np.ndarray, training: bool,
               stft_cfg: StftConfig = StftConfig()) -> Tensor:
    b = make_batch(noisy, clean, stft_cfg)
    out = model.forward(Tensor(b.features), training=training)
    amp, phase = recover_spectrum(out, b.noisy_amp)
    return compressed_loss(amp, phase, b.clean_amp, b.clean_phase)


def checkpoint_path(out_dir: str, epoch: int) -> str:
    return os.path.join(out_dir, f"epoch_{epoch:03d}.ckpt")


def latest_checkpoint(out_dir: str) -> tuple[int, str] | None:
    found = []
    for p in glob.glob(os.path.join(out_dir, "epoch_*.ckpt")):
        m = _CKPT_RE.search(p)
        if m:
            found.append((int(m.group(1)), p))
    return max(found) if found else None


def _comparable(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "epochs"}


class Trainer:
    def __init__(self, cfg: TrainConfig, data_dir: str, out_dir: str, log=print,
                 stft_cfg: StftConfig = StftConfig()):
        self.cfg = cfg
        self.data_dir = os.fspath(data_dir)
        self.out_dir = os.fspath(out_dir)
        self.log = log
        self.stft_cfg = stft_cfg
        self.model = IGCRN(cfg.model, seed=cfg.seed)
        self.opt = Adam(self.model.params, lr=cfg.lr)
        self.history: list[dict] = []
        self.start_epoch = 1

    def _resume(self) -> None:
        last = latest_checkpoint(self.out_dir)
        if last is None:
            return
        epoch, path = last
        ckpt = read_checkpoint(path)
        saved = ckpt.extra.get("train_config", {})
        if _comparable(saved) != _comparable(self.cfg.to_dict()):
            raise ConfigError(f"{path} was written with a different training config: {saved}")
        restore(ckpt, self.model, self.opt)
        self.history = [dict(h) for h in ckpt.extra.get("history", [])]
        self.start_epoch = epoch + 1
        self.log(f"resumed from {path} (epoch {epoch}, step {self.opt.step_count})")

    def _write_log(self) -> None:
        with open(os.path.join(self.out_dir, LOSS_LOG), "w") as fh:
            for h in self.history:
                fh.write(json.dumps(h, sort_keys=True) + "\n")

    def validate(self, noisy: list[np.ndarray], clean: list[np.ndarray]) -> float | None:
        if not noisy:
            return None
        losses = []
        with no_grad():
            for x, c in zip(noisy, clean):
                losses.append(float(batch_loss(self.model, x[None], c[None], False, self.stft_cfg).data))
        return float(np.mean(losses))

    def run(self, resume: bool = False) -> list[dict]:
        cfg = self.cfg
        os.makedirs(self.out_dir, exist_ok=True)
        _, tr_noisy, tr_clean = load_split(self.data_dir, "train")
        _, va_noisy, va_clean = load_split(self.data_dir, "val")
        if not tr_noisy:
            raise DataError(f"no training records in {self.data_dir}")
        if resume:
            self._resume()
        with open(os.path.join(self.out_dir, "train_config.json"), "w") as fh:
            json.dump(cfg.to_dict(), fh, sort_keys=True, indent=1)
        crop = int(round(cfg.crop_seconds * self.stft_cfg.sample_rate))
        n = len(tr_noisy)
        for epoch in range(self.start_epoch, cfg.epochs + 1):
            t0 = time.perf_counter()
            self.opt.lr = cfg.lr_at(epoch)
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(n)
            offsets = [int(rng.integers(0, max(tr_noisy[i].shape[-1] - crop, 0) + 1)) for i in range(n)]
            losses = []
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb = np.stack([crop_or_pad(tr_noisy[i], crop, offsets[i]) for i in idx])
                cb = np.stack([crop_or_pad(tr_clean[i], crop, offsets[i]) for i in idx])
                loss = batch_loss(self.model, xb, cb, True, self.stft_cfg)
                value = float(loss.data)
                if not np.isfinite(value):
                    raise NumericError(f"non-finite training loss at epoch {epoch}, step {self.opt.step_count + 1}")
                self.model.params.zero_grad()
                loss.backward()
                self.opt.step()
                losses.append(value)
            entry = {"epoch": epoch, "steps": self.opt.step_count, "lr": self.opt.lr,
                     "train_loss": float(np.mean(losses)), "val_loss": self.validate(va_noisy, va_clean)}
            self.history.append(entry)
            save_checkpoint(checkpoint_path(self.out_dir, epoch), self.model, self.opt, epoch,
                            extra={"train_config": cfg.to_dict(), "history": self.history})
            self._write_log()
            val = "n/a" if entry["val_loss"] is None else f"{entry['val_loss']:.5f}"
            self.log(f"epoch {epoch}: lr {self.opt.lr:.1e} train {entry['train_loss']:.5f} val {val} "
                     f"({time.perf_counter() - t0:.1f} s)")
        return self.history
