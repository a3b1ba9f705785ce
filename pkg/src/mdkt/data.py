"""Synthetic multi-camera identity clips standing in for video re-id benchmarks.

A frame of identity ``i`` seen by camera ``c`` is

    Mix @ (identity_scale * mu_i + camera_scale * c_c) + noise_scale * eps

with ``mu``, ``c`` and ``eps`` standard normal and ``Mix`` a fixed random
``frame_dim x latent_dim`` matrix whose columns are orthogonal with norm
``MIX_GAIN``. At gain 1 the default config is almost perfectly separable from
single frames; 0.5 leaves single-frame retrieval clearly harder than clip retrieval.
"""

import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, FormatError, ParameterError, SamplingError, UnsupportedVersionError

TRAIN, TEST = 0, 1

MAGIC = b"MDKTDATA"
VERSION = 1
_HEADER = struct.Struct("<8I3dQ")
MIX_GAIN = 0.5
_LABEL_DTYPE = np.dtype([("identity", "<u4"), ("camera", "<u4"), ("split", "u1")])


@dataclass(frozen=True)
class DatasetConfig:
    n_train_ids: int = 50
    n_test_ids: int = 20
    n_cameras: int = 4
    frames_per_clip: int = 8
    clips_per_id_per_camera: int = 2
    latent_dim: int = 16
    frame_dim: int = 64
    identity_scale: float = 1.0
    camera_scale: float = 0.6
    noise_scale: float = 0.4
    seed: int = 0

    def validate(self):
        for name in ("n_train_ids", "n_test_ids", "n_cameras", "frames_per_clip",
                     "clips_per_id_per_camera", "latent_dim", "frame_dim"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}", name)
        for name in ("identity_scale", "camera_scale", "noise_scale"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not np.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be a finite non-negative real, got {value!r}", name)
        if not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
        if self.frame_dim < self.latent_dim:
            raise ConfigError("frame_dim must be >= latent_dim so the mixing matrix keeps full rank",
                              "frame_dim")
        return self


@dataclass(frozen=True)
class ClipSample:
    """One identity observed by one camera over a run of frames.

    ``views`` holds the indices of ``frames`` within the source clip, so any
    subset drawn from it can be traced back to the original frames.
    """

    identity: int
    camera: int
    frames: np.ndarray
    index: int = -1
    views: tuple = ()

    def __post_init__(self):
        if not self.views:
            object.__setattr__(self, "views", tuple(range(len(self.frames))))

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class BatchSpec:
    P: int = 8
    K: int = 2
    teacher_views: int = 8
    student_views: int = 2

    def validate(self, frames_per_clip=None):
        if self.P < 2 or self.K < 2:
            raise ConfigError("batch needs P >= 2 identities and K >= 2 clips each", "P" if self.P < 2 else "K")
        if not self.teacher_views > self.student_views >= 1:
            raise ConfigError("views must satisfy teacher_views > student_views >= 1", "student_views")
        if frames_per_clip is not None and self.teacher_views > frames_per_clip:
            raise ConfigError(f"teacher_views={self.teacher_views} exceeds frames_per_clip={frames_per_clip}",
                              "teacher_views")
        return self


@dataclass(eq=False)
class Dataset:
    config: DatasetConfig
    frames: np.ndarray  # (n_clips, T, frame_dim)
    identities: np.ndarray
    cameras: np.ndarray
    split: np.ndarray
    _by_identity: dict = field(default=None, init=False, repr=False)

    def __len__(self):
        return len(self.identities)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.config == other.config
                and np.array_equal(self.frames, other.frames)
                and np.array_equal(self.identities, other.identities)
                and np.array_equal(self.cameras, other.cameras)
                and np.array_equal(self.split, other.split))

    def indices(self, split):
        return np.flatnonzero(self.split == split)

    def identity_set(self, split):
        return set(self.identities[self.split == split].tolist())

    def clip(self, i):
        return ClipSample(int(self.identities[i]), int(self.cameras[i]), self.frames[i], index=int(i))

    def clips(self, split):
        return [self.clip(i) for i in self.indices(split)]

    def clips_by_identity(self, split):
        if self._by_identity is None:
            self._by_identity = {}
        if split not in self._by_identity:
            groups = {}
            for i in self.indices(split):
                groups.setdefault(int(self.identities[i]), []).append(int(i))
            self._by_identity[split] = groups
        return self._by_identity[split]


def mixing_matrix(rng, frame_dim, latent_dim):
    q, r = np.linalg.qr(rng.standard_normal((frame_dim, latent_dim)))
    return MIX_GAIN * q * np.sign(np.diag(r))


def generate(config):
    config.validate()
    rng = np.random.default_rng(config.seed)
    n_ids = config.n_train_ids + config.n_test_ids
    T, F = config.frames_per_clip, config.frame_dim
    mix = mixing_matrix(rng, F, config.latent_dim)
    centres = rng.standard_normal((n_ids, config.latent_dim))
    offsets = rng.standard_normal((config.n_cameras, config.latent_dim))

    ids, cams = np.meshgrid(np.arange(n_ids), np.arange(config.n_cameras), indexing="ij")
    ids = np.repeat(ids.ravel(), config.clips_per_id_per_camera)
    cams = np.repeat(cams.ravel(), config.clips_per_id_per_camera)
    latent = config.identity_scale * centres[ids] + config.camera_scale * offsets[cams]
    clean = latent @ mix.T
    noise = rng.standard_normal((len(ids), T, F))
    frames = clean[:, None, :] + config.noise_scale * noise
    split = np.where(ids < config.n_train_ids, TRAIN, TEST).astype(np.uint8)
    return Dataset(config, frames, ids.astype(np.int64), cams.astype(np.int64), split)


def sample_pk_batch(dataset, spec, rng, split=TRAIN):
    """Draw ``P`` distinct identities and ``K`` distinct clips of each.

    The batch is ordered identity by identity, so labels read ``[a]*K + [b]*K + ...``.
    """
    groups = dataset.clips_by_identity(split)
    eligible = sorted(i for i, members in groups.items() if len(members) >= spec.K)
    if len(eligible) < spec.P:
        raise SamplingError(f"need {spec.P} identities with >= {spec.K} clips, dataset has {len(eligible)}")
    chosen = rng.choice(len(eligible), size=spec.P, replace=False)
    batch = []
    for j in chosen:
        members = groups[eligible[j]]
        for k in rng.choice(len(members), size=spec.K, replace=False):
            batch.append(dataset.clip(members[k]))
    return batch


def subset_views(clip, M, rng):
    """``M`` frames of ``clip`` drawn uniformly without replacement, in sampled order."""
    T = clip.n_frames
    if not 1 <= M <= T:
        raise ParameterError(f"cannot draw {M} views from a {T}-frame clip")
    pick = rng.choice(T, size=M, replace=False)
    return ClipSample(clip.identity, clip.camera, clip.frames[pick], index=clip.index,
                      views=tuple(clip.views[i] for i in pick))


def stack_frames(clips):
    """Stack equally long clips into a ``(B, n_frames, frame_dim)`` array."""
    return np.stack([c.frames for c in clips])


# -- binary container ------------------------------------------------------------

def save(dataset, path):
    c = dataset.config
    header = _HEADER.pack(c.n_train_ids, c.n_test_ids, c.n_cameras, c.frames_per_clip,
                          c.clips_per_id_per_camera, c.latent_dim, c.frame_dim, len(dataset),
                          float(c.identity_scale), float(c.camera_scale), float(c.noise_scale), c.seed)
    labels = np.empty(len(dataset), dtype=_LABEL_DTYPE)
    labels["identity"] = dataset.identities
    labels["camera"] = dataset.cameras
    labels["split"] = dataset.split
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([VERSION]))
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.frames, dtype="<f8").tobytes())
        fh.write(labels.tobytes())


def load(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    return from_bytes(raw)


def from_bytes(raw):
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise FormatError("missing MDKTDATA magic", 0)
    pos = len(MAGIC)
    if len(raw) <= pos:
        raise FormatError("truncated before version byte", pos)
    if raw[pos] != VERSION:
        raise UnsupportedVersionError(f"unsupported dataset version {raw[pos]} (expected {VERSION})", pos)
    pos += 1
    if len(raw) < pos + _HEADER.size:
        raise FormatError("truncated header", len(raw))
    (n_train, n_test, n_cam, T, per_cam, latent, F, n_clips,
     id_scale, cam_scale, noise_scale, seed) = _HEADER.unpack_from(raw, pos)
    pos += _HEADER.size
    config = DatasetConfig(n_train, n_test, n_cam, T, per_cam, latent, F,
                           id_scale, cam_scale, noise_scale, seed)
    try:
        config.validate()
    except ConfigError as exc:
        raise FormatError(f"invalid header: {exc}", len(MAGIC) + 1) from None
    if n_clips != (n_train + n_test) * n_cam * per_cam:
        raise FormatError("clip count disagrees with header dimensions", len(MAGIC) + 1)
    n_frame_bytes = n_clips * T * F * 8
    if len(raw) < pos + n_frame_bytes:
        raise FormatError("truncated frame block", len(raw))
    frames = np.frombuffer(raw, dtype="<f8", count=n_clips * T * F, offset=pos).astype(np.float64)
    pos += n_frame_bytes
    n_label_bytes = n_clips * _LABEL_DTYPE.itemsize
    if len(raw) < pos + n_label_bytes:
        raise FormatError("truncated label table", len(raw))
    labels = np.frombuffer(raw, dtype=_LABEL_DTYPE, count=n_clips, offset=pos)
    pos += n_label_bytes
    if pos != len(raw):
        raise FormatError("trailing bytes after label table", pos)
    return Dataset(config, frames.reshape(n_clips, T, F),
                   labels["identity"].astype(np.int64), labels["camera"].astype(np.int64),
                   labels["split"].astype(np.uint8))


def config_from_dict(d):
    known = {f.name for f in fields(DatasetConfig)}
    for key in d:
        if key not in known:
            raise ConfigError(f"unknown dataset field '{key}'", key)
    return DatasetConfig(**d).validate()


def config_to_dict(config):
    return asdict(config)
