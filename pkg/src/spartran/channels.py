"""Synthetic multipath channel generation and dataset handling.

A link measurement is a bandlimited impulse response: each propagation path
contributes a complex coefficient times a shifted sinc pulse, sampled on an
M-point grid, plus circular Gaussian noise.  A scene places anchors and
mirror-line reflectors in a 2D area and derives path delays from geometry,
which gives labeled data for localization and beam-selection heads.

Datasets round-trip through a little-endian binary container (magic "SPRT")
so runs are reproducible bit-for-bit.
"""

from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

SPEED_OF_LIGHT = 299_792_458.0
CARRIER_HZ = 3.5e9
MIN_RANGE_M = 0.1
DELAY_GUARD_TAPS = 8

DATASET_MAGIC = b"SPRT"
DATASET_VERSION = 1
_LABEL_KINDS = ("none", "position", "beam")

# Uniform circular array used to label beams: element count and the product
# of wavenumber and array radius (controls beam width).
BEAM_ARRAY_ELEMENTS = 16
BEAM_ARRAY_KR = 6.0


def worker_count() -> int:
    """Worker cap from SPARTRAN_THREADS, defaulting to the logical cores."""
    raw = os.environ.get("SPARTRAN_THREADS", "").strip()
    if not raw:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SPARTRAN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("SPARTRAN_THREADS must be >= 1")
    return n


@dataclass(frozen=True)
class PathSpec:
    """One propagation path: delay in seconds, non-negative magnitude, and a
    phase in (-pi, pi]."""

    tau: float
    magnitude: float
    phase: float

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError(f"path delay must be >= 0, got {self.tau}")
        if self.magnitude < 0:
            raise ValueError(f"path magnitude must be >= 0, got {self.magnitude}")

    @property
    def coeff(self) -> complex:
        return self.magnitude * np.exp(-1j * self.phase)


@dataclass
class ChannelSample:
    """One complex link measurement of M taps at a known bandwidth."""

    re: np.ndarray
    im: np.ndarray
    bandwidth_hz: float

    def __post_init__(self):
        self.re = np.asarray(self.re, dtype=np.float64)
        self.im = np.asarray(self.im, dtype=np.float64)
        if self.re.shape != self.im.shape or self.re.ndim != 1 or self.re.size == 0:
            raise ValueError(
                f"re/im must be equal-length nonempty vectors, got {self.re.shape} / {self.im.shape}"
            )

    @property
    def num_taps(self) -> int:
        return self.re.size

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.re, self.im)

    def as_complex(self) -> np.ndarray:
        return self.re + 1j * self.im


@dataclass(frozen=True)
class SceneConfig:
    """Geometry and sampling parameters of a synthetic scene.

    ``anchors`` are fixed transmitter sites; every labeled CSI sample groups
    one link per anchor.  ``paths_per_link`` must equal 1 + ``reflectors``
    (direct path plus one mirror image per reflector line).
    """

    extent: tuple[float, float, float, float]  # xmin, xmax, ymin, ymax
    anchors: tuple[tuple[float, float], ...]
    paths_per_link: int
    reflectors: int
    noise_sigma: float
    seed: int
    num_taps: int
    bandwidth_hz: float

    def __post_init__(self):
        xmin, xmax, ymin, ymax = self.extent
        if not (xmax > xmin and ymax > ymin):
            raise ConfigError(f"degenerate area extent {self.extent}")
        if len(self.anchors) < 1:
            raise ConfigError("scene needs at least one anchor")
        if self.paths_per_link < 1:
            raise ConfigError("paths_per_link must be >= 1")
        if self.reflectors < 0:
            raise ConfigError("reflectors must be >= 0")
        if self.paths_per_link != 1 + self.reflectors:
            raise ConfigError(
                f"paths_per_link ({self.paths_per_link}) must equal 1 + reflectors ({self.reflectors})"
            )
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.num_taps < 1 or self.bandwidth_hz <= 0:
            raise ConfigError("num_taps must be >= 1 and bandwidth_hz > 0")

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)


@dataclass
class LinkDataset:
    """A list of link samples, optionally labeled per group of ``group_size``
    consecutive links (one CSI snapshot = one link per anchor)."""

    samples: list[ChannelSample]
    label_kind: str = "none"
    labels: np.ndarray | None = None
    group_size: int = 1

    def __post_init__(self):
        if self.label_kind not in _LABEL_KINDS:
            raise DataError(f"unknown label kind {self.label_kind!r}")
        if self.label_kind == "none":
            self.labels = None
        else:
            if self.labels is None:
                raise DataError("labeled dataset is missing its label block")
            self.labels = np.asarray(self.labels)
            if self.group_size < 1 or len(self.samples) % self.group_size != 0:
                raise DataError(
                    f"sample count {len(self.samples)} is not a multiple of group size {self.group_size}"
                )
            if self.labels.shape[0] != len(self.samples) // self.group_size:
                raise DataError(
                    f"label count {self.labels.shape[0]} does not match "
                    f"{len(self.samples)} samples / group size {self.group_size}"
                )

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_groups(self) -> int:
        return len(self.samples) // self.group_size

    def group(self, i: int) -> list[ChannelSample]:
        lo = i * self.group_size
        return self.samples[lo : lo + self.group_size]


def synth_cir(
    paths: list[PathSpec],
    num_taps: int,
    bandwidth_hz: float,
    noise_sigma: float,
    rng: np.random.Generator,
) -> ChannelSample:
    """Sample the bandlimited response of the given paths on taps 1..M.

    Tap m holds sum_k a_k * sinc(m - tau_k * W) plus complex Gaussian noise
    with per-component standard deviation noise_sigma / sqrt(2).
    """
    if num_taps < 1:
        raise ValueError(f"num_taps must be >= 1, got {num_taps}")
    if bandwidth_hz <= 0:
        raise ValueError(f"bandwidth must be > 0, got {bandwidth_hz}")
    m = np.arange(1, num_taps + 1, dtype=np.float64)
    h = np.zeros(num_taps, dtype=np.complex128)
    for p in paths:
        shift = p.tau * bandwidth_hz
        if shift > num_taps + DELAY_GUARD_TAPS:
            raise ValueError(
                f"path delay {p.tau:.3e}s falls {shift:.1f} taps in, beyond the "
                f"observation window of {num_taps} taps (+{DELAY_GUARD_TAPS} guard)"
            )
        h += p.coeff * np.sinc(m - shift)
    if noise_sigma > 0:
        comp_std = noise_sigma / math.sqrt(2.0)
        h += rng.normal(0.0, comp_std, num_taps) + 1j * rng.normal(0.0, comp_std, num_taps)
    return ChannelSample(h.real.copy(), h.imag.copy(), bandwidth_hz)


def _position_stream(seed: int, index: int) -> np.random.Generator:
    # Counter-based Philox stream keyed by (seed, stream index): positions can
    # be generated in parallel or out of order without changing the data.
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


_POSITION_SAMPLER_INDEX = 2**63  # reserved stream, never a position index


def _reflector_lines(scene: SceneConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic mirror lines (point on line, unit normal) for the scene."""
    rng = _position_stream(scene.seed, _POSITION_SAMPLER_INDEX + 1)
    xmin, xmax, ymin, ymax = scene.extent
    lines = []
    for _ in range(scene.reflectors):
        point = np.array(
            [rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)], dtype=np.float64
        )
        angle = rng.uniform(-math.pi, math.pi)
        normal = np.array([math.cos(angle), math.sin(angle)], dtype=np.float64)
        lines.append((point, normal))
    return lines


def _mirror(point: np.ndarray, line: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    origin, normal = line
    return point - 2.0 * float(np.dot(point - origin, normal)) * normal


def link_paths(
    anchor: tuple[float, float],
    position: np.ndarray,
    lines: list[tuple[np.ndarray, np.ndarray]],
) -> list[PathSpec]:
    """Direct plus one mirror-image path per reflector for a single link.

    Magnitude falls off as 1/length and the phase is the carrier rotation
    -2*pi*f_c*tau wrapped into (-pi, pi].  Ranges are clamped to 0.1 m.
    """
    pos = np.asarray(position, dtype=np.float64)
    sources = [np.asarray(anchor, dtype=np.float64)]
    sources += [_mirror(np.asarray(anchor, dtype=np.float64), ln) for ln in lines]
    paths = []
    for src in sources:
        length = max(float(np.linalg.norm(pos - src)), MIN_RANGE_M)
        tau = length / SPEED_OF_LIGHT
        phase = -2.0 * math.pi * CARRIER_HZ * tau
        phase = math.remainder(phase, 2.0 * math.pi)  # to (-pi, pi]
        if phase <= -math.pi:
            phase += 2.0 * math.pi
        paths.append(PathSpec(tau=tau, magnitude=1.0 / length, phase=phase))
    return paths


def _links_for_position(
    scene: SceneConfig,
    lines: list[tuple[np.ndarray, np.ndarray]],
    index: int,
    position: np.ndarray,
) -> list[ChannelSample]:
    rng = _position_stream(scene.seed, index)
    out = []
    for anchor in scene.anchors:
        paths = link_paths(anchor, position, lines)
        out.append(
            synth_cir(paths, scene.num_taps, scene.bandwidth_hz, scene.noise_sigma, rng)
        )
    return out


def sample_scene(scene: SceneConfig, positions: np.ndarray) -> LinkDataset:
    """Generate one link per anchor for every position, labeled by position."""
    positions = np.asarray(positions, dtype=np.float64)
    if positions.size == 0:
        raise ValueError("positions list is empty")
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ValueError(f"positions must be (n, 2), got {positions.shape}")
    xmin, xmax, ymin, ymax = scene.extent
    inside = (
        (positions[:, 0] >= xmin)
        & (positions[:, 0] <= xmax)
        & (positions[:, 1] >= ymin)
        & (positions[:, 1] <= ymax)
    )
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise ValueError(f"position {bad} at {positions[bad]} outside extent {scene.extent}")

    lines = _reflector_lines(scene)
    workers = worker_count()
    if workers > 1 and len(positions) >= 256:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_pos = list(
                pool.map(
                    lambda ip: _links_for_position(scene, lines, ip[0], ip[1]),
                    enumerate(positions),
                )
            )
    else:
        per_pos = [
            _links_for_position(scene, lines, i, p) for i, p in enumerate(positions)
        ]
    samples = [s for links in per_pos for s in links]
    return LinkDataset(
        samples=samples,
        label_kind="position",
        labels=positions.copy(),
        group_size=scene.num_anchors,
    )


def random_positions(scene: SceneConfig, count: int) -> np.ndarray:
    """Seed-deterministic uniform positions inside the scene extent."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = _position_stream(scene.seed, _POSITION_SAMPLER_INDEX)
    xmin, xmax, ymin, ymax = scene.extent
    xs = rng.uniform(xmin, xmax, count)
    ys = rng.uniform(ymin, ymax, count)
    return np.column_stack([xs, ys])


def beam_codebook(codebook_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Steering vectors of a uniform circular array at uniformly spaced beam
    angles covering the full circle.  Returns (beam_angles, vectors)."""
    if codebook_size < 2:
        raise ValueError(f"codebook_size must be >= 2, got {codebook_size}")
    beams = -math.pi + 2.0 * math.pi * (np.arange(codebook_size) + 0.5) / codebook_size
    gamma = 2.0 * math.pi * np.arange(BEAM_ARRAY_ELEMENTS) / BEAM_ARRAY_ELEMENTS
    vectors = np.exp(1j * BEAM_ARRAY_KR * np.cos(beams[:, None] - gamma[None, :]))
    return beams, vectors


def best_beam(codebook_size: int, angle: float) -> int:
    """Index of the steering vector with the largest response to ``angle``."""
    _, vectors = beam_codebook(codebook_size)
    gamma = 2.0 * math.pi * np.arange(BEAM_ARRAY_ELEMENTS) / BEAM_ARRAY_ELEMENTS
    incoming = np.exp(1j * BEAM_ARRAY_KR * np.cos(angle - gamma))
    responses = np.abs(vectors.conj() @ incoming)
    return int(np.argmax(responses))


def make_beam_dataset(
    scene: SceneConfig, codebook_size: int, positions: np.ndarray
) -> LinkDataset:
    """Scene links labeled with the best serving beam from anchor 0.

    The label is the codebook index whose steering vector responds most
    strongly to the direct-path departure angle from anchor 0.
    """
    if codebook_size < 2:
        raise ValueError(f"codebook_size must be >= 2, got {codebook_size}")
    base = sample_scene(scene, positions)
    anchor0 = np.asarray(scene.anchors[0], dtype=np.float64)
    labels = np.empty(len(positions), dtype=np.int64)
    for i, pos in enumerate(np.asarray(positions, dtype=np.float64)):
        delta = pos - anchor0
        angle = math.atan2(delta[1], delta[0])
        labels[i] = best_beam(codebook_size, angle)
    return LinkDataset(
        samples=base.samples,
        label_kind="beam",
        labels=labels,
        group_size=scene.num_anchors,
    )


def normalize_global(dataset: LinkDataset) -> LinkDataset:
    """Scale every sample by one shared factor so the 99th-percentile
    (nearest-rank) per-sample peak magnitude becomes 1."""
    if len(dataset.samples) == 0:
        raise ValueError("cannot normalize an empty dataset")
    peaks = np.array([s.magnitude.max() for s in dataset.samples])
    if not (peaks > 0).any():
        raise ValueError("cannot normalize an all-zero dataset")
    rank = math.ceil(0.99 * peaks.size)
    ref = float(np.sort(peaks)[rank - 1])
    if ref == 0.0:
        ref = float(peaks.max())
    factor = 1.0 / ref
    scaled = [
        ChannelSample(s.re * factor, s.im * factor, s.bandwidth_hz)
        for s in dataset.samples
    ]
    return LinkDataset(
        samples=scaled,
        label_kind=dataset.label_kind,
        labels=None if dataset.labels is None else dataset.labels.copy(),
        group_size=dataset.group_size,
    )


# -- binary container -------------------------------------------------------

_HEADER = struct.Struct("<4sHBBIIQd")


def save_dataset(dataset: LinkDataset, path) -> None:
    """Write the little-endian "SPRT" container (bit-exact round trip)."""
    if not dataset.samples:
        raise DataError("refusing to write an empty dataset")
    m = dataset.samples[0].num_taps
    w = dataset.samples[0].bandwidth_hz
    for s in dataset.samples:
        if s.num_taps != m or s.bandwidth_hz != w:
            raise DataError("all samples in a dataset must share M and bandwidth")
    kind_code = _LABEL_KINDS.index(dataset.label_kind)
    blob = bytearray()
    blob += _HEADER.pack(
        DATASET_MAGIC,
        DATASET_VERSION,
        kind_code,
        0,
        m,
        dataset.group_size,
        len(dataset.samples),
        w,
    )
    inter = np.empty((len(dataset.samples), 2 * m), dtype="<f8")
    for i, s in enumerate(dataset.samples):
        inter[i, 0::2] = s.re
        inter[i, 1::2] = s.im
    blob += inter.tobytes()
    if dataset.label_kind == "position":
        blob += np.ascontiguousarray(dataset.labels, dtype="<f8").tobytes()
    elif dataset.label_kind == "beam":
        blob += np.ascontiguousarray(dataset.labels, dtype="<u4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_dataset(path) -> LinkDataset:
    """Read a dataset container, validating magic, version, and length."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"dataset {path} is truncated (no header)")
    magic, version, kind_code, _, m, group, count, w = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise DataError(f"dataset {path} has bad magic {magic!r}")
    if version != DATASET_VERSION:
        raise DataError(f"dataset {path} has unsupported version {version}")
    if kind_code >= len(_LABEL_KINDS):
        raise DataError(f"dataset {path} has unknown label kind {kind_code}")
    kind = _LABEL_KINDS[kind_code]
    offset = _HEADER.size
    need = count * 2 * m * 8
    if len(raw) < offset + need:
        raise DataError(f"dataset {path} is truncated (sample block)")
    inter = np.frombuffer(raw, dtype="<f8", count=count * 2 * m, offset=offset)
    inter = inter.reshape(count, 2 * m)
    offset += need
    samples = [
        ChannelSample(inter[i, 0::2].copy(), inter[i, 1::2].copy(), w)
        for i in range(count)
    ]
    labels = None
    if kind != "none":
        if group < 1 or count % group != 0:
            raise DataError(f"dataset {path}: count {count} not divisible by group {group}")
        n_groups = count // group
        if kind == "position":
            need = n_groups * 2 * 8
            if len(raw) < offset + need:
                raise DataError(f"dataset {path} is truncated (label block)")
            labels = (
                np.frombuffer(raw, dtype="<f8", count=n_groups * 2, offset=offset)
                .reshape(n_groups, 2)
                .copy()
            )
        else:
            need = n_groups * 4
            if len(raw) < offset + need:
                raise DataError(f"dataset {path} is truncated (label block)")
            labels = np.frombuffer(raw, dtype="<u4", count=n_groups, offset=offset).astype(
                np.int64
            )
    return LinkDataset(samples=samples, label_kind=kind, labels=labels, group_size=group)
