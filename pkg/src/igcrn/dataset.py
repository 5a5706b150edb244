"""Simulated dual-channel datasets and their JSONL manifests.

Each record is derived from ``(seed, split, index)`` alone, so any record can
be regenerated in isolation and whole datasets are bit-reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .acoustics import RirCache, RoomScene, doa_grid, synthesize_mixture
from .corpus import NOISE_PRESETS, noise_like, speech_like
from .wavio import write_wav

MANIFEST = "manifest.jsonl"
SPLITS = ("train", "val", "test")
TARGET_RMS = 0.05


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_train: int = 450
    n_val: int = 20
    n_test: int = 51
    duration: float = 4.0
    snrs: tuple[float, ...] = (-3.0, 0.0, 3.0)
    test_snrs: tuple[float, ...] = (-3.0, 0.0, 3.0)
    noises: tuple[str, ...] = NOISE_PRESETS
    t60: float = 0.3
    test_offset: float = 0.0
    # explicit (speech_doa, noise_doa) pairs for the test split; every pair
    # gets the same n_test source signals so conditions are directly comparable
    test_pairs: tuple[tuple[float, float], ...] = ()
    sample_rate: int = 16000
    seed: int = 0

    def __post_init__(self):
        for p in self.noises:
            if p not in NOISE_PRESETS:
                raise DataError(f"unknown noise preset {p!r}")
        if self.duration < 0.5:
            raise DataError("mixtures must be at least 0.5 s long")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise DataError("split sizes must be non-negative")

    def scene(self) -> RoomScene:
        return RoomScene(t60=self.t60, sample_rate=self.sample_rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("snrs", "test_snrs", "noises"):
            d[k] = list(d[k])
        d["test_pairs"] = [list(p) for p in self.test_pairs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for k in ("snrs", "test_snrs", "noises"):
            if k in d:
                d[k] = tuple(d[k])
        if "test_pairs" in d:
            d["test_pairs"] = tuple(tuple(float(a) for a in p) for p in d["test_pairs"])
        return cls(**d)


def _record_rng(seed: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SPLITS.index(split), index])


def plan_split(cfg: SimConfig, split: str) -> list[dict]:
    """Records (without audio) for one split."""
    if split == "test" and cfg.test_pairs:
        base = [_plan_one(cfg, split, i, doa_grid("test", cfg.test_offset), cfg.test_snrs)
                for i in range(cfg.n_test)]
        out = []
        for j, (s_doa, n_doa) in enumerate(cfg.test_pairs):
            for i, rec in enumerate(base):
                r = dict(rec, speech_doa=float(s_doa), noise_doa=float(n_doa))
                r["id"] = f"test-p{j:02d}-{i:05d}"
                out.append(r)
        return out
    n = {"train": cfg.n_train, "val": cfg.n_val, "test": cfg.n_test}[split]
    grid = doa_grid("train") if split != "test" else doa_grid("test", cfg.test_offset)
    snrs = cfg.snrs if split != "test" else cfg.test_snrs
    return [_plan_one(cfg, split, i, grid, snrs) for i in range(n)]


def _plan_one(cfg: SimConfig, split: str, index: int, grid, snrs) -> dict:
    rng = _record_rng(cfg.seed, split, index)
    s_idx, n_idx = rng.choice(len(grid), size=2, replace=False)
    return {
        "id": f"{split}-{index:05d}",
        "split": split,
        "index": index,
        "global_seed": cfg.seed,
        "speech_seed": int(rng.integers(0, 2 ** 31)),
        "noise": cfg.noises[index % len(cfg.noises)],
        "noise_seed": int(rng.integers(0, 2 ** 31)),
        "speech_doa": float(grid[s_idx]),
        "noise_doa": float(grid[n_idx]),
        "snr_db": float(snrs[(index // len(cfg.noises)) % len(snrs)]),
        "duration": cfg.duration,
        "t60": cfg.t60,
    }


def render(rec: dict, cfg: SimConfig, rirs: RirCache):
    """Synthesize the audio of one planned record."""
    fs = cfg.sample_rate
    speech = speech_like(rec["speech_seed"], rec["duration"], fs)
    noise = noise_like(rec["noise"], rec["noise_seed"], rec["duration"], fs)
    mix = synthesize_mixture(speech, noise, rirs(rec["speech_doa"]), rirs(rec["noise_doa"]), rec["snr_db"], rec)
    scale = TARGET_RMS / np.sqrt(np.mean(mix.noisy ** 2))
    mix.noisy *= scale
    mix.clean *= scale
    mix.noise *= scale
    return mix


def simulate(cfg: SimConfig, out_dir: str | os.PathLike, splits=SPLITS, log=None) -> list[dict]:
    """Write WAVs for every record plus ``manifest.jsonl`` and ``sim_config.json``."""
    out_dir = os.fspath(out_dir)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise DataError(f"{out_dir} is not writable")
    rirs = RirCache(cfg.scene())
    records = []
    for split in splits:
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        planned = plan_split(cfg, split)
        for k, rec in enumerate(planned):
            mix = render(rec, cfg, rirs)
            rec = dict(rec, scene=cfg.scene().to_dict())
            for kind, wave in (("noisy", mix.noisy), ("clean", mix.clean), ("noise", mix.noise)):
                rel = os.path.join(split, f"{rec['id']}_{kind}.wav")
                write_wav(os.path.join(out_dir, rel), wave, cfg.sample_rate, "float32")
                rec[f"{kind}_path"] = rel
            records.append(rec)
            if log is not None and (k + 1) % 50 == 0:
                log(f"{split}: {k + 1}/{len(planned)} mixtures")
    write_manifest(os.path.join(out_dir, MANIFEST), records)
    with open(os.path.join(out_dir, "sim_config.json"), "w") as fh:
        json.dump(cfg.to_dict(), fh, sort_keys=True, indent=1)
    return records


def write_manifest(path: str | os.PathLike, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_manifest(path: str | os.PathLike, split: str | None = None) -> list[dict]:
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    if not os.path.exists(path):
        raise DataError(f"manifest {path} not found")
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from exc
            if split is None or rec.get("split") == split:
                out.append(rec)
    return out
