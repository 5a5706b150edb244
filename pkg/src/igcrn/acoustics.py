"""Image-method room impulse responses and dual-channel mixture synthesis.

Every impulse response carries a bulk delay of ``SINC_HALF`` samples so that
the 81-tap fractional-delay kernel of the direct path starts no earlier than
``floor(dist / c * fs)``. The delay is common to all paths and all
microphones, so inter-channel cues are unaffected.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import fftconvolve

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81
SINC_HALF = SINC_TAPS // 2


class AcousticError(ValueError):
    """Invalid scene geometry, reverberation setting or source signal."""


@dataclass(frozen=True)
class RoomScene:
    room_dims: tuple[float, float, float] = (5.0, 5.0, 3.0)
    mic_spacing: float = 0.02
    source_distance: float = 1.5
    height: float = 1.5
    t60: float = 0.3
    sample_rate: int = 16000
    max_image_order: int | None = None
    rir_seconds: float | None = None

    def __post_init__(self):
        if len(self.room_dims) != 3 or min(self.room_dims) <= 0:
            raise AcousticError(f"room dimensions must be three positive lengths, got {self.room_dims}")
        if self.t60 < 0:
            raise AcousticError("t60 must be non-negative")
        if self.max_image_order is not None and self.max_image_order < 0:
            raise AcousticError("max_image_order must be non-negative")
        reflection_coefficient(self)
        for p in self.mic_positions():
            _check_inside(p, self.room_dims, "microphone")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.room_dims[0] / 2, self.room_dims[1] / 2, self.height])

    def mic_positions(self) -> np.ndarray:
        """``[2, 3]``; microphone 1 sits on the +x side so positive angles reach it first."""
        half = np.array([self.mic_spacing / 2, 0.0, 0.0])
        return np.stack([self.center + half, self.center - half])

    def source_position(self, angle_deg: float) -> np.ndarray:
        """Point at ``source_distance`` from the array center; 0 degrees is broadside (+y)."""
        if not -90.0 <= angle_deg <= 90.0:
            raise AcousticError(f"source angle {angle_deg} outside [-90, 90]")
        th = math.radians(angle_deg)
        p = self.center + self.source_distance * np.array([math.sin(th), math.cos(th), 0.0])
        _check_inside(p, self.room_dims, "source")
        return p

    def rir_length(self) -> int:
        secs = self.rir_seconds if self.rir_seconds is not None else max(self.t60, 0.0)
        direct = (self.source_distance + self.mic_spacing) / SPEED_OF_SOUND
        return int(math.ceil((secs + direct) * self.sample_rate)) + SINC_TAPS

    def image_order(self) -> int:
        if self.max_image_order is not None:
            return self.max_image_order
        if reflection_coefficient(self) == 0.0:
            return 0
        reach = self.rir_length() / self.sample_rate * SPEED_OF_SOUND
        return int(math.ceil(reach / min(self.room_dims))) + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["room_dims"] = list(self.room_dims)
        return d


def _check_inside(p, dims, what: str) -> None:
    if np.any(np.asarray(p) <= 0) or np.any(np.asarray(p) >= np.asarray(dims)):
        raise AcousticError(f"{what} at {np.round(p, 4).tolist()} is not strictly inside room {list(dims)}")


def reflection_coefficient(scene: RoomScene) -> float:
    """Uniform wall pressure reflection coefficient from Sabine's formula (0 for t60 = 0)."""
    if scene.t60 == 0:
        return 0.0
    lx, ly, lz = scene.room_dims
    volume = lx * ly * lz
    surface = 2 * (lx * ly + lx * lz + ly * lz)
    alpha = 0.161 * volume / (surface * scene.t60)
    if not 0 < alpha <= 1:
        raise AcousticError(f"t60={scene.t60} s needs absorption {alpha:.3f}, outside (0, 1] for this room")
    return math.sqrt(1.0 - alpha)


def fractional_delay_kernel(delay: float) -> tuple[int, np.ndarray]:
    """Hann-windowed sinc for ``delay`` samples, shifted by ``SINC_HALF``.

    Returns ``(first_index, taps)`` with ``first_index = floor(delay)``.
    """
    start = int(math.floor(delay))
    x = np.arange(SINC_TAPS) + start - (delay + SINC_HALF)
    win = 0.5 * (1 + np.cos(np.pi * x / (SINC_HALF + 1)))
    return start, np.sinc(x) * win


def image_sources(src: np.ndarray, dims, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Image positions ``[M, 3]`` and reflection counts ``[M]`` with total count <= ``order``."""
    per_dim = []
    for axis in range(3):
        length = dims[axis]
        coords, refl = [], []
        for n in range(-(order // 2) - 1, order // 2 + 2):
            for q in (0, 1):
                r = abs(2 * n - q)
                if r <= order:
                    coords.append(2 * n * length + (1 - 2 * q) * src[axis])
                    refl.append(r)
        per_dim.append((np.array(coords), np.array(refl)))
    (xs, rx), (ys, ry), (zs, rz) = per_dim
    total = rx[:, None, None] + ry[None, :, None] + rz[None, None, :]
    keep = total <= order
    ix, iy, iz = np.nonzero(keep)
    pos = np.stack([xs[ix], ys[iy], zs[iz]], axis=1)
    return pos, total[keep]


def image_method_rir(scene: RoomScene, source_pos, mic_pos, order: int | None = None,
                     length: int | None = None) -> np.ndarray:
    """Impulse response from ``source_pos`` to ``mic_pos`` by mirrored-source summation."""
    src = np.asarray(source_pos, dtype=np.float64)
    mic = np.asarray(mic_pos, dtype=np.float64)
    _check_inside(src, scene.room_dims, "source")
    _check_inside(mic, scene.room_dims, "microphone")
    beta = reflection_coefficient(scene)
    order = scene.image_order() if order is None else order
    n = scene.rir_length() if length is None else length
    if beta == 0.0:
        order = 0
    pos, refl = image_sources(src, scene.room_dims, order)
    dist = np.linalg.norm(pos - mic, axis=1)
    delay = dist / SPEED_OF_SOUND * scene.sample_rate
    fits = np.floor(delay) < n
    delay, dist, refl = delay[fits], dist[fits], refl[fits]
    gain = beta ** refl / (4 * np.pi * dist)
    start = np.floor(delay).astype(np.int64)
    offs = np.arange(SINC_TAPS)
    x = (start[:, None] + offs[None, :]) - (delay[:, None] + SINC_HALF)
    taps = np.sinc(x) * (0.5 * (1 + np.cos(np.pi * x / (SINC_HALF + 1)))) * gain[:, None]
    idx = (start[:, None] + offs[None, :]).ravel()
    inside = idx < n
    return np.bincount(idx[inside], weights=taps.ravel()[inside], minlength=n)[:n]


def array_rirs(scene: RoomScene, angle_deg: float) -> np.ndarray:
    """``[2, L]`` impulse responses from a source at ``angle_deg`` to both microphones."""
    src = scene.source_position(angle_deg)
    return np.stack([image_method_rir(scene, src, m) for m in scene.mic_positions()])


class RirCache:
    """Memoizes :func:`array_rirs` per angle for one scene."""

    def __init__(self, scene: RoomScene):
        self.scene = scene
        self._cache: dict[float, np.ndarray] = {}

    def __call__(self, angle_deg: float) -> np.ndarray:
        key = float(angle_deg)
        if key not in self._cache:
            self._cache[key] = array_rirs(self.scene, key)
        return self._cache[key]


@dataclass
class Mixture:
    noisy: np.ndarray
    clean: np.ndarray
    noise: np.ndarray
    noise_gain: float
    record: dict = field(default_factory=dict)


def _image(signal: np.ndarray, rirs: np.ndarray) -> np.ndarray:
    return np.stack([fftconvolve(signal, h)[: signal.size] for h in rirs])


def measured_snr(clean: np.ndarray, noise: np.ndarray) -> float:
    """Channel-averaged energy ratio in dB."""
    es = np.mean(np.sum(np.square(clean), axis=-1))
    en = np.mean(np.sum(np.square(noise), axis=-1))
    return float(10 * np.log10(es / en))


def synthesize_mixture(speech: np.ndarray, noise: np.ndarray, speech_rirs: np.ndarray,
                       noise_rirs: np.ndarray, snr_db: float, record: dict | None = None) -> Mixture:
    """Spatialize both sources and scale the noise image to the requested SNR.

    The SNR is the ratio of reverberant speech energy to reverberant noise
    energy, each averaged over the two channels. ``noise`` must be at least as
    long as ``speech`` and is cut to its length.
    """
    s = np.asarray(speech, dtype=np.float64)
    v = np.asarray(noise, dtype=np.float64)
    if s.ndim != 1 or v.ndim != 1:
        raise AcousticError("speech and noise must be mono")
    if v.size < s.size:
        raise AcousticError(f"noise has {v.size} samples, speech needs {s.size}")
    v = v[: s.size]
    if not np.any(s) or not np.any(v):
        raise AcousticError("speech or noise segment has zero energy")
    clean = _image(s, speech_rirs)
    nimg = _image(v, noise_rirs)
    es = np.mean(np.sum(clean ** 2, axis=-1))
    en = np.mean(np.sum(nimg ** 2, axis=-1))
    if es == 0 or en == 0:
        raise AcousticError("reverberant speech or noise image has zero energy")
    gain = math.sqrt(es / (en * 10 ** (snr_db / 10)))
    nimg *= gain
    return Mixture(clean + nimg, clean, nimg, gain, dict(record or {}))


def doa_grid(mode: str, offset: float = 0.0) -> list[float]:
    """Source angles in degrees.

    ``train`` is the 9-point grid at 22.5 degree spacing. ``test`` is the
    11.25 degree grid shifted by ``offset``, keeping the points inside
    [-90, 90]: 17 points for ``offset=0``, fewer otherwise.
    """
    if mode == "train":
        return [float(a) for a in np.linspace(-90.0, 90.0, 9)]
    if mode == "test":
        if not -11.25 < offset < 11.25:
            raise AcousticError("test grid offset must lie within one grid step (-11.25, 11.25)")
        pts = -90.0 + offset + 11.25 * np.arange(-1, 18)
        return [float(a) for a in pts if -90.0 <= a <= 90.0]
    raise AcousticError(f"unknown grid mode {mode!r}")
