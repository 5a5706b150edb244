"""SI-SDR, SNR and STOI, plus grouped evaluation over a mixture manifest."""

from __future__ import annotations

import json
import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy.signal import resample_poly

DB_CAP = 60.0

# STOI constants of the original algorithm
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MIN_FREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0
_EPS = np.finfo(np.float64).eps


class MetricError(ValueError):
    pass


def _pair(est, ref) -> tuple[np.ndarray, np.ndarray]:
    e = np.asarray(est, dtype=np.float64).ravel()
    r = np.asarray(ref, dtype=np.float64).ravel()
    if e.size != r.size:
        raise MetricError(f"length mismatch: estimate {e.size}, reference {r.size}")
    if not np.any(r):
        raise MetricError("reference signal is all zeros")
    return e, r


def _ratio_db(num: float, den: float) -> float:
    if den <= 0:
        return DB_CAP
    if num <= 0:
        return -DB_CAP
    return float(np.clip(10 * math.log10(num / den), -DB_CAP, DB_CAP))


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, clipped to +/-60."""
    e, r = _pair(est, ref)
    target = (np.dot(e, r) / np.dot(r, r)) * r
    return _ratio_db(float(np.dot(target, target)), float(np.sum((target - e) ** 2)))


def snr(est, ref) -> float:
    """Plain (scale-dependent) SNR of the estimate against the reference, in dB."""
    e, r = _pair(est, ref)
    return _ratio_db(float(np.dot(r, r)), float(np.sum((r - e) ** 2)))


def _third_octave_matrix() -> np.ndarray:
    f = np.linspace(0, STOI_FS, STOI_NFFT + 1)[: STOI_NFFT // 2 + 1]
    k = np.arange(STOI_BANDS, dtype=np.float64)
    lo = STOI_MIN_FREQ * 2.0 ** ((2 * k - 1) / 6)
    hi = STOI_MIN_FREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((STOI_BANDS, f.size))
    for i in range(STOI_BANDS):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


def _frames(x: np.ndarray, hop: int, include_last: bool) -> np.ndarray:
    stop = x.size - STOI_FRAME + (1 if include_last else 0)
    starts = np.arange(0, max(stop, 0), hop)
    win = np.hanning(STOI_FRAME + 2)[1:-1]
    if starts.size == 0:
        return np.zeros((0, STOI_FRAME))
    return x[starts[:, None] + np.arange(STOI_FRAME)] * win


def _overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    n = frames.shape[0]
    out = np.zeros((n - 1) * hop + STOI_FRAME) if n else np.zeros(0)
    for i in range(n):
        out[i * hop: i * hop + STOI_FRAME] += frames[i]
    return out


def _drop_silence(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    hop = STOI_FRAME // 2
    xf = _frames(x, hop, include_last=True)
    yf = _frames(y, hop, include_last=True)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - STOI_DYN_RANGE
    return _overlap_add(xf[keep], hop), _overlap_add(yf[keep], hop)


def stoi(est, ref, fs: int = 16000) -> float:
    """Short-time objective intelligibility of ``est`` against clean ``ref``."""
    e, r = _pair(est, ref)
    if e.size < 0.5 * fs:
        raise MetricError(f"STOI needs at least 0.5 s of audio, got {e.size / fs:.3f} s")
    if fs != STOI_FS:
        g = math.gcd(int(fs), STOI_FS)
        e = resample_poly(e, STOI_FS // g, int(fs) // g)
        r = resample_poly(r, STOI_FS // g, int(fs) // g)
    r, e = _drop_silence(r, e)
    win = STOI_FRAME // 2
    spec_r = np.fft.rfft(_frames(r, win, include_last=False), n=STOI_NFFT, axis=1).T
    spec_e = np.fft.rfft(_frames(e, win, include_last=False), n=STOI_NFFT, axis=1).T
    obm = _third_octave_matrix()
    x_tob = np.sqrt(obm @ np.abs(spec_r) ** 2)
    y_tob = np.sqrt(obm @ np.abs(spec_e) ** 2)
    n_seg = x_tob.shape[1] - STOI_SEGMENT + 1
    if n_seg < 1:
        raise MetricError("too little non-silent audio for one STOI segment")
    idx = np.arange(n_seg)[:, None] + np.arange(STOI_SEGMENT)[None, :]
    xs = x_tob[:, idx].transpose(1, 0, 2)  # [segments, bands, frames]
    ys = y_tob[:, idx].transpose(1, 0, 2)
    norm = np.linalg.norm(xs, axis=2, keepdims=True) / (np.linalg.norm(ys, axis=2, keepdims=True) + _EPS)
    yp = np.minimum(ys * norm, xs * (1 + 10 ** (-STOI_BETA / 20)))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xs = xs - xs.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + _EPS
    xs /= np.linalg.norm(xs, axis=2, keepdims=True) + _EPS
    # the raw score can dip below zero for anti-correlated envelopes; the metric is reported in [0, 1]
    return float(np.clip(np.sum(yp * xs) / (xs.shape[0] * xs.shape[1]), 0.0, 1.0))


# ------------------------------------------------------------------ reports

METRIC_NAMES = ("si_sdr", "snr", "stoi")
GROUPINGS = {"snr_noise": ("snr_db", "noise"), "doa": ("speech_doa", "noise_doa")}


def score(est, ref, fs: int = 16000) -> dict:
    return {"si_sdr": si_sdr(est, ref), "snr": snr(est, ref), "stoi": stoi(est, ref, fs)}


@dataclass
class EvalReport:
    utterances: list[dict] = field(default_factory=list)

    def groups(self, grouping: str) -> list[dict]:
        keys = GROUPINGS[grouping]
        buckets: dict[tuple, list[dict]] = {}
        for u in self.utterances:
            buckets.setdefault(tuple(u[k] for k in keys), []).append(u)
        out = []
        for key in sorted(buckets, key=lambda t: tuple(str(v) if isinstance(v, str) else v for v in t)):
            rows = buckets[key]
            rec = dict(zip(keys, key))
            rec["count"] = len(rows)
            for m in METRIC_NAMES:
                rec[m] = float(np.mean([u[m] for u in rows]))
                if f"noisy_{m}" in rows[0]:
                    rec[f"noisy_{m}"] = float(np.mean([u[f"noisy_{m}"] for u in rows]))
            out.append(rec)
        return out

    def overall(self) -> dict:
        rec: dict = {"count": len(self.utterances)}
        if not self.utterances:
            return rec
        for m in METRIC_NAMES:
            rec[m] = float(np.mean([u[m] for u in self.utterances]))
            if f"noisy_{m}" in self.utterances[0]:
                rec[f"noisy_{m}"] = float(np.mean([u[f"noisy_{m}"] for u in self.utterances]))
        return rec

    def to_jsonl(self) -> str:
        lines = [json.dumps({"kind": "utterance", **u}, sort_keys=True) for u in self.utterances]
        for g in GROUPINGS:
            lines += [json.dumps({"kind": "group", "grouping": g, **r}, sort_keys=True) for r in self.groups(g)]
        lines.append(json.dumps({"kind": "overall", **self.overall()}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def table(self, grouping: str = "snr_noise") -> str:
        keys = GROUPINGS[grouping]
        head = [*keys, "count", *METRIC_NAMES]
        rows = [[str(r[k]) for k in keys] + [str(r["count"])] + [f"{r[m]:.3f}" for m in METRIC_NAMES]
                for r in self.groups(grouping)]
        widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(head)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        return "\n".join([fmt.format(*head)] + [fmt.format(*row) for row in rows]) + "\n"


Enhancer = Callable[[np.ndarray, dict], np.ndarray]


def evaluate_records(records: Iterable[dict], root: str | os.PathLike, enhancer: Enhancer,
                     reference_channel: int = 0, with_noisy: bool = True) -> EvalReport:
    """Score ``enhancer(noisy[2, N], record) -> [N]`` against the reverberant clean reference."""
    from .wavio import read_wav

    report = EvalReport()
    for rec in records:
        paths = {k: os.path.join(root, rec[k]) for k in ("noisy_path", "clean_path")}
        for p in paths.values():
            if not os.path.exists(p):
                raise FileNotFoundError(p)
        noisy, fs = read_wav(paths["noisy_path"], None)
        clean, _ = read_wav(paths["clean_path"], fs)
        ref = clean[reference_channel]
        est = np.asarray(enhancer(noisy, rec), dtype=np.float64).ravel()
        if est.size != ref.size:
            raise MetricError(f"enhancer returned {est.size} samples for a {ref.size}-sample input")
        row = {"id": rec["id"], "snr_db": rec["snr_db"], "noise": rec["noise"],
               "speech_doa": rec["speech_doa"], "noise_doa": rec["noise_doa"], **score(est, ref, fs)}
        if with_noisy:
            row.update({f"noisy_{k}": v for k, v in score(noisy[reference_channel], ref, fs).items()})
        report.utterances.append(row)
    if not report.utterances:
        warnings.warn("manifest is empty; report has no entries")
    return report
