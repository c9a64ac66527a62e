"""Gated sparse reconstruction head.

Three affine maps read the latent vector z: one estimates coefficient
magnitudes, one drives a hard binary gate deciding which atoms are active,
and one generates phases (bounded to (-pi, pi) by a scaled tanh).  The
decoded channel is the dictionary applied to the gated complex coefficients.

The training objective has three parts:
  * reconstruction: squared error of the decoded channel against the input,
  * sparsity: the rectified gate pre-activations, weighted by the sparsity
    coefficient, which pushes open gates shut without shrinking the
    coefficient path (the hard gate passes no gradient),
  * auxiliary: a second reconstruction that uses the raw gate values as
    coefficient magnitudes through a gradient-frozen dictionary, training
    the gate path despite the binarization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channels import ChannelSample
from .dictionary import Dictionary


@dataclass(frozen=True)
class GateConfig:
    n_atoms: int
    lam: float  # sparsity coefficient, >= 0
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if self.lam < 0:
            raise ValueError(f"sparsity coefficient must be >= 0, got {self.lam}")


@dataclass
class SparseCode:
    """Gate and coefficient tensors for one sample (nodes of the live graph).

    gate_bits[i] = 1[rho_gate[i] > 0]; x_hat is zero wherever the gate is
    closed; (a_re, a_im) = x_hat * (cos(phase), -sin(phase)).
    """

    x_hat: Tensor
    rho_gate: Tensor
    gate_bits: Tensor
    phases: Tensor
    a_re: Tensor
    a_im: Tensor


@dataclass(frozen=True)
class LossBreakdown:
    reconstruction: float
    sparsity: float
    auxiliary: float
    total: float


def init_head_params(
    n_latent: int, n_atoms: int, rng: np.random.Generator
) -> dict[str, np.ndarray]:
    """Xavier-uniform weights and zero biases for the three affine paths."""
    limit = math.sqrt(6.0 / (n_latent + n_atoms))
    params = {}
    for path in ("coeff", "gate", "phase"):
        params[f"head.{path}_w"] = rng.uniform(-limit, limit, size=(n_latent, n_atoms))
        params[f"head.{path}_b"] = np.zeros(n_atoms)
    return params


def head_forward(z: Tensor, params: Mapping[str, Tensor], cfg: GateConfig) -> SparseCode:
    """Produce the sparse code for one latent vector.

    The Heaviside gate carries a hard gradient stop: the coefficient path
    receives no training signal through the binarization.
    """
    coeff = ad.leaky_relu(
        ad.matmul(z, params["head.coeff_w"]) + params["head.coeff_b"], cfg.leaky_slope
    )
    rho = ad.leaky_relu(
        ad.matmul(z, params["head.gate_w"]) + params["head.gate_b"], cfg.leaky_slope
    )
    bits = ad.heaviside(rho)
    x_hat = coeff * bits
    phases = ad.scale(
        ad.tanh(ad.matmul(z, params["head.phase_w"]) + params["head.phase_b"]), math.pi
    )
    a_re = x_hat * ad.cos(phases)
    a_im = ad.neg(x_hat * ad.sin(phases))
    return SparseCode(
        x_hat=x_hat, rho_gate=rho, gate_bits=bits, phases=phases, a_re=a_re, a_im=a_im
    )


def _atoms_tensor(dictionary) -> Tensor:
    if isinstance(dictionary, Tensor):
        return dictionary
    if isinstance(dictionary, Dictionary):
        return Tensor(dictionary.atoms)
    return Tensor(np.asarray(dictionary, dtype=np.float64))


def decode_tensors(a_re: Tensor, a_im: Tensor, atoms: Tensor, freeze_atoms: bool = False):
    """Apply the real dictionary to complex coefficients: (atoms@re, atoms@im).

    With ``freeze_atoms`` the dictionary input edge carries a gradient stop,
    so this reconstruction can never update the atoms.
    """
    if atoms.data.shape[1] != a_re.data.shape[0]:
        raise ValueError(
            f"dictionary has {atoms.data.shape[1]} atoms, code has {a_re.data.shape[0]}"
        )
    stops = (0,) if freeze_atoms else ()
    re = ad.matmul(atoms, a_re, stop_slots=stops)
    im = ad.matmul(atoms, a_im, stop_slots=stops)
    return re, im


def decode(code: SparseCode, dictionary) -> np.ndarray:
    """Decoded complex channel as a plain array (convenience view)."""
    atoms = _atoms_tensor(dictionary)
    re, im = decode_tensors(code.a_re, code.a_im, atoms)
    return re.data + 1j * im.data


def loss_graph(
    target_re: np.ndarray,
    target_im: np.ndarray,
    code: SparseCode,
    atoms: Tensor,
    cfg: GateConfig,
) -> dict[str, Tensor]:
    """Build the three loss terms and their sum as live graph nodes.

    The auxiliary term freezes the dictionary edge; phases flow into both
    reconstructions.
    """
    t_re = Tensor(np.asarray(target_re, dtype=np.float64))
    t_im = Tensor(np.asarray(target_im, dtype=np.float64))

    rec_re, rec_im = decode_tensors(code.a_re, code.a_im, atoms)
    reconstruction = ad.sq_l2_norm(t_re - rec_re) + ad.sq_l2_norm(t_im - rec_im)

    sparsity = ad.scale(ad.sum_all(ad.relu(code.rho_gate)), cfg.lam)

    cphi = ad.cos(code.phases)
    sphi = ad.sin(code.phases)
    rho_re = code.rho_gate * cphi
    rho_im = ad.neg(code.rho_gate * sphi)
    aux_re, aux_im = decode_tensors(rho_re, rho_im, atoms, freeze_atoms=True)
    auxiliary = ad.sq_l2_norm(t_re - aux_re) + ad.sq_l2_norm(t_im - aux_im)

    total = reconstruction + sparsity + auxiliary
    return {
        "reconstruction": reconstruction,
        "sparsity": sparsity,
        "auxiliary": auxiliary,
        "total": total,
    }


def loss(sample: ChannelSample, code: SparseCode, dictionary, cfg: GateConfig) -> LossBreakdown:
    """Numeric loss breakdown for one sample."""
    terms = loss_graph(sample.re, sample.im, code, _atoms_tensor(dictionary), cfg)
    return LossBreakdown(
        reconstruction=terms["reconstruction"].item(),
        sparsity=terms["sparsity"].item(),
        auxiliary=terms["auxiliary"].item(),
        total=terms["total"].item(),
    )


def count_active(code: SparseCode) -> int:
    """Number of open gates (active atoms) in a sparse code."""
    return int(code.gate_bits.data.sum())
