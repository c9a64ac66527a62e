"""Dictionaries of channel basis waveforms (atoms).

Two kinds exist: a closed-form dictionary of delay-shifted sinc pulses,
usable whenever the bandwidth is known, and a learned dictionary whose
atoms are free parameters constrained to unit norm (direction only; the
coefficients carry amplitude and phase).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError

DICTIONARY_MAGIC = b"SPRD"
DICTIONARY_VERSION = 1

ATOM_NORM_TOL = 1e-9


@dataclass
class Dictionary:
    """An M x N real atom matrix; column i is atom i."""

    atoms: np.ndarray
    kind: str  # "fixed" | "learned"
    tau_max: float | None = None
    bandwidth_hz: float | None = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2 or self.atoms.size == 0:
            raise ValueError(f"atoms must be a nonempty 2D matrix, got {self.atoms.shape}")
        if self.kind not in ("fixed", "learned"):
            raise ValueError(f"unknown dictionary kind {self.kind!r}")

    @property
    def num_taps(self) -> int:
        return self.atoms.shape[0]

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class CoherenceReport:
    """Gram-matrix statistics of a dictionary."""

    mutual_coherence: float
    gram_offdiag_max: float
    atom_norms: np.ndarray


def build_sinc_dictionary(
    num_taps: int, num_atoms: int, bandwidth_hz: float, tau_max: float | None = None
) -> Dictionary:
    """Closed-form dictionary of sinc pulses on a uniform delay grid.

    Atom i is sinc(m - i * tau_max * W / N) sampled at taps m = 1..M.  The
    default tau_max = M / W spreads the grid over the whole observation
    window.
    """
    if num_taps < 1 or num_atoms < 1 or bandwidth_hz <= 0:
        raise ValueError(
            f"need M >= 1, N >= 1, W > 0; got M={num_taps}, N={num_atoms}, W={bandwidth_hz}"
        )
    if tau_max is None:
        tau_max = num_taps / bandwidth_hz
    if tau_max <= 0:
        raise ValueError(f"tau_max must be > 0, got {tau_max}")
    m = np.arange(1, num_taps + 1, dtype=np.float64)
    shifts = np.arange(num_atoms, dtype=np.float64) * (tau_max * bandwidth_hz / num_atoms)
    atoms = np.sinc(m[:, None] - shifts[None, :])
    return Dictionary(atoms=atoms, kind="fixed", tau_max=tau_max, bandwidth_hz=bandwidth_hz)


def init_learned_dictionary(
    num_taps: int, num_atoms: int, rng: np.random.Generator
) -> Dictionary:
    """Standard-normal atoms, each normalized to unit length."""
    if num_taps < 1 or num_atoms < 1:
        raise ValueError(f"need M >= 1 and N >= 1, got M={num_taps}, N={num_atoms}")
    atoms = rng.standard_normal((num_taps, num_atoms))
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
    return Dictionary(atoms=atoms, kind="learned")


def renormalize_atoms(dictionary: Dictionary) -> Dictionary:
    """Rescale every learned atom back to unit norm, keeping its direction.

    A zero column means the atom stalled during training; that is surfaced
    as an error rather than silently reinitialized.
    """
    if dictionary.kind != "learned":
        raise ValueError("only learned dictionaries are renormalized")
    norms = np.linalg.norm(dictionary.atoms, axis=0)
    dead = np.flatnonzero(norms == 0.0)
    if dead.size:
        raise NumericError(f"dictionary atom {int(dead[0])} collapsed to zero norm")
    return Dictionary(atoms=dictionary.atoms / norms[None, :], kind="learned")


def coherence_report(dictionary: Dictionary) -> CoherenceReport:
    """Mutual coherence and Gram off-diagonal statistics.

    Atoms with numerically vanishing norm (possible at the edge of a fixed
    sinc grid, where a pulse peaks outside the tap window) are excluded from
    the normalized coherence; their norms still appear in the report.
    """
    if dictionary.num_atoms < 2:
        raise ValueError("coherence needs at least two atoms")
    atoms = dictionary.atoms
    norms = np.linalg.norm(atoms, axis=0)
    gram = atoms.T @ atoms
    off = gram.copy()
    np.fill_diagonal(off, 0.0)
    gram_offdiag_max = float(np.abs(off).max())
    tiny = norms <= 1e-12
    safe = np.where(tiny, 1.0, norms)
    normalized = np.abs(off) / np.outer(safe, safe)
    normalized[tiny, :] = 0.0
    normalized[:, tiny] = 0.0
    return CoherenceReport(
        mutual_coherence=float(normalized.max()),
        gram_offdiag_max=gram_offdiag_max,
        atom_norms=norms,
    )


# -- binary container -------------------------------------------------------

_HEADER = struct.Struct("<4sHBBIIdd")
_KINDS = ("fixed", "learned")


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Write the little-endian "SPRD" container."""
    kind_code = _KINDS.index(dictionary.kind)
    tau = dictionary.tau_max if dictionary.tau_max is not None else math.nan
    w = dictionary.bandwidth_hz if dictionary.bandwidth_hz is not None else math.nan
    blob = _HEADER.pack(
        DICTIONARY_MAGIC,
        DICTIONARY_VERSION,
        kind_code,
        0,
        dictionary.num_taps,
        dictionary.num_atoms,
        tau,
        w,
    ) + np.ascontiguousarray(dictionary.atoms, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(blob)


def load_dictionary(path) -> Dictionary:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read dictionary {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"dictionary {path} is truncated (no header)")
    magic, version, kind_code, _, m, n, tau, w = _HEADER.unpack_from(raw)
    if magic != DICTIONARY_MAGIC:
        raise DataError(f"dictionary {path} has bad magic {magic!r}")
    if version != DICTIONARY_VERSION:
        raise DataError(f"dictionary {path} has unsupported version {version}")
    if kind_code >= len(_KINDS):
        raise DataError(f"dictionary {path} has unknown kind {kind_code}")
    need = _HEADER.size + m * n * 8
    if len(raw) < need:
        raise DataError(f"dictionary {path} is truncated (atom block)")
    atoms = np.frombuffer(raw, dtype="<f8", count=m * n, offset=_HEADER.size).reshape(m, n)
    return Dictionary(
        atoms=atoms.copy(),
        kind=_KINDS[kind_code],
        tau_max=None if math.isnan(tau) else tau,
        bandwidth_hz=None if math.isnan(w) else w,
    )
