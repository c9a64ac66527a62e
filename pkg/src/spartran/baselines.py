"""Classical sparse-recovery solvers and preconditioning-rate arithmetic.

These are the reference answers the learned pipeline is measured against:
a greedy orthogonal matching pursuit, a brute-force support-enumeration
oracle (globally optimal for small sizes), and the closed-form check that a
diagonal reweighting operator strictly improves the worst-case coefficient
mass of a family of signals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .channels import ChannelSample
from .dictionary import Dictionary
from .errors import ConfigError

EXHAUSTIVE_GUARD = 200_000


@dataclass
class SparseSolution:
    """Support plus complex coefficients, with the residual at those values."""

    support: tuple[int, ...]
    coeffs_re: np.ndarray
    coeffs_im: np.ndarray
    residual_norm: float

    @property
    def sparsity(self) -> int:
        return len(self.support)


@dataclass(frozen=True)
class TheoremCheckReport:
    """Worst-case coefficient masses before/after diagonal reweighting."""

    R: float
    R_S: float
    B: float
    c: float
    preconditioned_norm: float
    improved: bool


def _stacked_residual_norm(h: np.ndarray, atoms: np.ndarray, support, cre, cim) -> float:
    re = h.real - (atoms[:, support] @ cre if len(support) else 0.0)
    im = h.imag - (atoms[:, support] @ cim if len(support) else 0.0)
    return math.sqrt(float(re @ re) + float(im @ im))


def _ls_fit(atoms_s: np.ndarray, h: np.ndarray):
    # atoms are real, so real and imaginary parts decouple
    cre, *_ = np.linalg.lstsq(atoms_s, h.real, rcond=None)
    cim, *_ = np.linalg.lstsq(atoms_s, h.imag, rcond=None)
    return cre, cim


def omp_solve(
    sample: ChannelSample, dictionary: Dictionary, max_k: int, eps: float
) -> SparseSolution:
    """Orthogonal matching pursuit against a real dictionary.

    Greedily picks the atom with the largest complex correlation magnitude
    against the residual, refits all selected coefficients by least squares,
    and stops once the residual norm drops to ``eps`` or ``max_k`` atoms are
    used.
    """
    m, n = dictionary.atoms.shape
    if sample.num_taps != m:
        raise ValueError(f"sample has {sample.num_taps} taps, dictionary expects {m}")
    if max_k > min(m, n):
        raise ValueError(f"max_k {max_k} exceeds min(M, N) = {min(m, n)}")
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    atoms = dictionary.atoms
    h = sample.as_complex()
    support: list[int] = []
    cre = cim = np.zeros(0)
    residual = h.copy()
    res_norm = math.sqrt(float(residual.real @ residual.real) + float(residual.imag @ residual.imag))
    while len(support) < max_k and res_norm > eps:
        corr = np.abs(atoms.T @ residual)
        corr[support] = -1.0
        pick = int(np.argmax(corr))
        if corr[pick] <= 0.0:
            break
        support.append(pick)
        cre, cim = _ls_fit(atoms[:, support], h)
        residual = h - atoms[:, support] @ (cre + 1j * cim)
        res_norm = math.sqrt(
            float(residual.real @ residual.real) + float(residual.imag @ residual.imag)
        )
    return SparseSolution(
        support=tuple(support),
        coeffs_re=np.asarray(cre),
        coeffs_im=np.asarray(cim),
        residual_norm=res_norm,
    )


def default_eps(noise_sigma: float, num_taps: int) -> float:
    """Allowed reconstruction error: expected noise norm plus 10% slack."""
    return 1.1 * noise_sigma * math.sqrt(2.0 * num_taps)


def exhaustive_sparse_oracle(
    sample: ChannelSample, dictionary: Dictionary, k: int
) -> SparseSolution:
    """Globally optimal residual over every support of size <= k.

    Enumerates supports in lexicographic order, so residual ties resolve to
    the lexicographically smallest support.  Guarded to C(N, k) <= 200 000.
    """
    m, n = dictionary.atoms.shape
    if sample.num_taps != m:
        raise ValueError(f"sample has {sample.num_taps} taps, dictionary expects {m}")
    if k < 0:
        raise ValueError("k must be >= 0")
    if math.comb(n, k) > EXHAUSTIVE_GUARD:
        raise ValueError(
            f"C({n}, {k}) = {math.comb(n, k)} exceeds the enumeration guard {EXHAUSTIVE_GUARD}"
        )
    atoms = dictionary.atoms
    h = sample.as_complex()
    best = SparseSolution(
        support=(),
        coeffs_re=np.zeros(0),
        coeffs_im=np.zeros(0),
        residual_norm=math.sqrt(float(h.real @ h.real) + float(h.imag @ h.imag)),
    )
    for size in range(1, k + 1):
        for support in combinations(range(n), size):
            cre, cim = _ls_fit(atoms[:, support], h)
            res = _stacked_residual_norm(h, atoms, list(support), cre, cim)
            if res < best.residual_norm:
                best = SparseSolution(
                    support=support,
                    coeffs_re=cre,
                    coeffs_im=cim,
                    residual_norm=res,
                )
    return best


def theorem2_check(
    coefficient_sets: list[np.ndarray] | np.ndarray, s_set, c: float
) -> TheoremCheckReport:
    """Verify that diagonal reweighting beats the unweighted coefficient mass.

    Over a family of coefficient magnitude vectors, R is the worst-case total
    mass, R_S the worst-case mass inside the index set S, and B the worst-case
    mass outside S.  Scaling the S coordinates by c > R_S / (R - B) yields a
    preconditioned mass B + R_S / c, which must be strictly below R.
    """
    coeffs = np.atleast_2d(np.abs(np.asarray(coefficient_sets, dtype=np.float64)))
    if coeffs.size == 0:
        raise ConfigError("coefficient set list is empty")
    n = coeffs.shape[1]
    s_idx = sorted(set(int(i) for i in s_set))
    if not s_idx:
        raise ConfigError("index set S is empty")
    if s_idx[0] < 0 or s_idx[-1] >= n:
        raise ConfigError(f"index set S out of range for {n} coefficients")
    mask = np.zeros(n, dtype=bool)
    mask[s_idx] = True

    big_r = float(coeffs.sum(axis=1).max())
    r_s = float(coeffs[:, mask].sum(axis=1).max())
    b = float(coeffs[:, ~mask].sum(axis=1).max()) if (~mask).any() else 0.0

    if not b < r_s:
        raise ConfigError(f"hypothesis violated: B < R_S fails ({b} >= {r_s})")
    if not b < big_r:
        raise ConfigError(f"hypothesis violated: B < R fails ({b} >= {big_r})")
    threshold = r_s / (big_r - b)
    if not c > threshold:
        raise ConfigError(
            f"hypothesis violated: c > R_S/(R-B) fails ({c} <= {threshold})"
        )
    precond = b + r_s / c
    return TheoremCheckReport(
        R=big_r,
        R_S=r_s,
        B=b,
        c=float(c),
        preconditioned_norm=precond,
        improved=precond < big_r,
    )
