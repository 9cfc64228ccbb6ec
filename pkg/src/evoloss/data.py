"""Deterministic synthetic multi-modal clip generator.

Each clip is a moving 2-D Gaussian blob on a toroidal grid. The blob's
direction and speed are functions of the class id; start position, amplitude,
color and pixel noise are seeded per-clip jitter. Grey, flow and audio are all
derived deterministically from the same latent trajectory, so every modality
carries class information:

  rgb    [T, 3, H, W]   blob rendered in a clip-specific color, in [0, 1]
  grey   [T, 1, H, W]   channel mean of rgb (exact)
  flow   [T-1, 2, H, W] signed frame differences of grey (exact)
  audio  [A]            sinusoid; frequency keyed by class, phase locked to
                        the blob's x position, in [-1, 1]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .rngs import make_rng

BLOB_SIGMA = 1.8
START_JITTER = 2.0      # pixels, uniform in each axis
AMPLITUDE_RANGE = (0.6, 1.0)
COLOR_RANGE = (0.25, 1.0)
NOISE = 0.08            # uniform pixel noise half-width on rgb
BASE_FREQ = 2           # audio cycles per clip for class 0
FREQ_STEP = 2           # extra cycles per class id

MAGIC = b"EVML"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class DatasetSpec:
    n_clips: int
    n_classes: int
    frames: int
    height: int
    width: int
    audio_samples: int
    seed: int

    def __post_init__(self):
        if self.frames < 4:
            raise ValueError(f"frames must be >= 4, got {self.frames}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        for name in ("n_clips", "height", "width", "audio_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class MultiModalClip:
    rgb: np.ndarray
    grey: np.ndarray
    flow: np.ndarray
    audio: np.ndarray
    class_id: int
    clip_id: int


def derive_grey(rgb: np.ndarray) -> np.ndarray:
    """grey[t, 0] = (rgb[t,0] + rgb[t,1] + rgb[t,2]) / 3, exact."""
    g = (rgb[:, 0] + rgb[:, 1] + rgb[:, 2]) / 3.0
    return g[:, None, :, :]


def derive_flow(rgb: np.ndarray) -> np.ndarray:
    """Two signed-difference channels from consecutive grey frames.

    Channel 0 is the plain frame difference; channel 1 differences against the
    next frame cyclically shifted back one pixel along x, so unit +x motion
    cancels there. Clamped to [-1, 1].
    """
    if rgb.shape[0] < 2:
        raise ValueError(f"need at least 2 frames, got {rgb.shape[0]}")
    grey = derive_grey(rgb)[:, 0]
    ch0 = grey[1:] - grey[:-1]
    ch1 = np.roll(grey[1:], -1, axis=-1) - grey[:-1]
    return np.clip(np.stack([ch0, ch1], axis=1), -1.0, 1.0)


def class_velocity(class_id: int, n_classes: int) -> tuple[float, float]:
    """Pixels per frame; class 0 moves exactly +1 along x."""
    angle = 2.0 * np.pi * class_id / n_classes
    speed = 1.0 + 0.5 * (class_id % 3)
    return speed * float(np.cos(angle)), speed * float(np.sin(angle))


def class_frequency(class_id: int) -> int:
    """Audio cycles per clip window; deterministic in the class id."""
    return BASE_FREQ + FREQ_STEP * class_id


def _render_blob(cx: float, cy: float, h: int, w: int) -> np.ndarray:
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    dy = np.mod(ys - cy + h / 2.0, h) - h / 2.0
    dx = np.mod(xs - cx + w / 2.0, w) - w / 2.0
    return np.exp(-(dx * dx + dy * dy) / (2.0 * BLOB_SIGMA ** 2))


def gen_clip(class_id: int, clip_seed: int, spec: DatasetSpec, *,
             zero_jitter: bool = False, clip_id: int | None = None) -> MultiModalClip:
    """Render one clip. `zero_jitter` is a debug flag: integer start at the
    grid center, unit amplitude, fixed color, no noise, so the class-0 blob
    moves exactly +1 pixel per frame along x."""
    if class_id >= spec.n_classes:
        raise ValueError(f"class_id {class_id} out of range [0, {spec.n_classes})")
    t, h, w, a = spec.frames, spec.height, spec.width, spec.audio_samples
    rng = make_rng(spec.seed, "clip", class_id, clip_seed)
    vx, vy = class_velocity(class_id, spec.n_classes)

    if zero_jitter:
        sx, sy = float(w // 2), float(h // 2)
        amplitude = 1.0
        color = np.array([1.0, 0.6, 0.3])
        noise = np.zeros((t, 3, h, w))
    else:
        sx = w / 2.0 + rng.uniform(-START_JITTER, START_JITTER)
        sy = h / 2.0 + rng.uniform(-START_JITTER, START_JITTER)
        amplitude = rng.uniform(*AMPLITUDE_RANGE)
        color = rng.uniform(*COLOR_RANGE, size=3)
        noise = rng.uniform(-NOISE, NOISE, size=(t, 3, h, w))

    rgb = np.empty((t, 3, h, w))
    for ti in range(t):
        blob = _render_blob(sx + vx * ti, sy + vy * ti, h, w)
        rgb[ti] = amplitude * color[:, None, None] * blob[None, :, :]
    rgb = np.clip(rgb + noise, 0.0, 1.0)

    samples = np.arange(a, dtype=np.float64)
    x_pos = sx + vx * (samples / a) * t
    phase = 2.0 * np.pi * class_frequency(class_id) * samples / a \
        + 2.0 * np.pi * x_pos / w
    audio = 0.9 * amplitude * np.sin(phase)

    return MultiModalClip(rgb=rgb, grey=derive_grey(rgb), flow=derive_flow(rgb),
                          audio=audio, class_id=class_id,
                          clip_id=clip_seed if clip_id is None else clip_id)


class ClipSet:
    """Array-backed sequence of MultiModalClip.

    Stacked storage keeps batch gathers cheap; indexing returns clip views.
    """

    def __init__(self, spec: DatasetSpec, rgb, grey, flow, audio, class_ids, clip_ids):
        self.spec = spec
        self.rgb = rgb
        self.grey = grey
        self.flow = flow
        self.audio = audio
        self.class_ids = class_ids
        self.clip_ids = clip_ids

    def __len__(self) -> int:
        return self.rgb.shape[0]

    def __getitem__(self, i: int) -> MultiModalClip:
        return MultiModalClip(rgb=self.rgb[i], grey=self.grey[i], flow=self.flow[i],
                              audio=self.audio[i], class_id=int(self.class_ids[i]),
                              clip_id=int(self.clip_ids[i]))

    def subset(self, indices) -> "ClipSet":
        idx = np.asarray(indices)
        return ClipSet(replace(self.spec, n_clips=len(idx)),
                       self.rgb[idx], self.grey[idx], self.flow[idx],
                       self.audio[idx], self.class_ids[idx], self.clip_ids[idx])

    @staticmethod
    def from_clips(spec: DatasetSpec, clips: list[MultiModalClip]) -> "ClipSet":
        return ClipSet(spec,
                       np.stack([c.rgb for c in clips]),
                       np.stack([c.grey for c in clips]),
                       np.stack([c.flow for c in clips]),
                       np.stack([c.audio for c in clips]),
                       np.array([c.class_id for c in clips], dtype=np.int64),
                       np.array([c.clip_id for c in clips], dtype=np.int64))


def gen_dataset(spec: DatasetSpec) -> ClipSet:
    """Round-robin class assignment shuffled by the spec seed; pure in spec."""
    classes = np.array([i % spec.n_classes for i in range(spec.n_clips)])
    perm = make_rng(spec.seed, "classes").permutation(spec.n_clips)
    classes = classes[perm]
    clips = [gen_clip(int(classes[i]), clip_seed=i, spec=spec) for i in range(spec.n_clips)]
    return ClipSet.from_clips(spec, clips)


def sample_misaligned_audio(clip: MultiModalClip, pool: ClipSet,
                            rng: np.random.Generator | int, *,
                            branch: str | None = None) -> np.ndarray:
    """Audio that is guaranteed not to be the clip's own aligned audio.

    Coin flip between two negative types: another clip's audio verbatim, or
    the same clip's audio cyclically shifted by at least a quarter window.
    `branch` ("other" / "shift") forces one type for tests.
    """
    if len(pool) < 2:
        raise ValueError(f"pool must hold at least 2 clips, got {len(pool)}")
    if isinstance(rng, (int, np.integer)):
        rng = make_rng(rng, "misalign")
    if branch is None:
        branch = "other" if rng.integers(2) == 0 else "shift"

    if branch == "other":
        others = np.flatnonzero(pool.clip_ids != clip.clip_id)
        if others.size == 0:
            raise ValueError("pool holds no clip different from the query clip")
        return pool.audio[rng.choice(others)].copy()
    if branch == "shift":
        a = clip.audio.shape[0]
        lo, hi = a // 4, a - a // 4
        s = int(rng.integers(lo, hi + 1))
        shifted = np.roll(clip.audio, s)
        # A pathologically periodic waveform could survive the shift; walk
        # forward until the result actually differs from the aligned audio.
        for _ in range(a):
            if not np.array_equal(shifted, clip.audio):
                break
            s = lo + (s + 1 - lo) % (hi - lo + 1)
            shifted = np.roll(clip.audio, s)
        return shifted
    raise ValueError(f"unknown branch {branch!r}")


@dataclass(frozen=True)
class DataBundle:
    """The three splits one experiment runs on."""
    unlabeled: ClipSet
    probe: ClipSet
    test: ClipSet


def make_bundle(*, n_unlabeled: int, n_probe: int, n_test: int, n_classes: int,
                frames: int, height: int, width: int, audio_samples: int,
                seed: int) -> DataBundle:
    from .rngs import derive_seed

    def spec(n, tag):
        return DatasetSpec(n_clips=n, n_classes=n_classes, frames=frames,
                           height=height, width=width, audio_samples=audio_samples,
                           seed=derive_seed(seed, tag))

    return DataBundle(unlabeled=gen_dataset(spec(n_unlabeled, "unlabeled")),
                      probe=gen_dataset(spec(n_probe, "probe")),
                      test=gen_dataset(spec(n_test, "test")))


# ---------------------------------------------------------------------------
# binary export

_HEADER = struct.Struct("<4sH7I")  # magic, version, spec fields


def save_dataset(clips: ClipSet, path) -> None:
    """Little-endian binary export; f32 payload, bit-exact on round-trip."""
    spec = clips.spec
    if not (0 <= spec.seed < 2 ** 32):
        raise ValueError("binary export stores the seed as u32; seed out of range")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, spec.n_clips, spec.n_classes,
                              spec.frames, spec.height, spec.width,
                              spec.audio_samples, spec.seed))
        for i in range(len(clips)):
            for arr in (clips.rgb[i], clips.grey[i], clips.flow[i], clips.audio[i]):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            fh.write(struct.pack("<I", int(clips.class_ids[i])))


def load_dataset(path) -> ClipSet:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, n, k, t, h, w, a, seed = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported format version {version}")
        spec = DatasetSpec(n_clips=n, n_classes=k, frames=t, height=h, width=w,
                           audio_samples=a, seed=seed)
        shapes = {"rgb": (t, 3, h, w), "grey": (t, 1, h, w),
                  "flow": (t - 1, 2, h, w), "audio": (a,)}
        out = {name: np.empty((n, *shape)) for name, shape in shapes.items()}
        class_ids = np.empty(n, dtype=np.int64)
        for i in range(n):
            for name, shape in shapes.items():
                count = int(np.prod(shape))
                buf = fh.read(4 * count)
                out[name][i] = np.frombuffer(buf, dtype="<f4").reshape(shape)
            class_ids[i] = struct.unpack("<I", fh.read(4))[0]
        if fh.read(1):
            raise ValueError("trailing bytes after last clip")
    return ClipSet(spec, out["rgb"], out["grey"], out["flow"], out["audio"],
                   class_ids, np.arange(n, dtype=np.int64))
