"""Fung transversely isotropic strain energy with analytic stress and tangent.

All functions accept a single 3x3 state or a (..., 3, 3) batch. The strain
exponent is
    Q = b_ff*E_ff^2 + b_xx*(E_ss^2 + E_nn^2 + E_sn^2 + E_ns^2)
        + b_fx*(E_fn^2 + E_nf^2 + E_fs^2 + E_sf^2)
with every off-diagonal component counted separately, so the coefficient
matrix B below multiplies each matrix entry once: Q = sum(B * E * E).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvertedElement, Overflow

Q_OVERFLOW_LIMIT = 700.0


@dataclass(frozen=True)
class MaterialParams:
    """Stiffness scale C (Pa), dimensionless exponents, volumetric penalty (Pa)."""

    C: float
    b_ff: float = 29.9
    b_xx: float = 13.3
    b_fx: float = 26.6
    kappa_vol: float | None = None   # None -> 10*C; 0 disables the penalty

    def __post_init__(self):
        if self.C <= 0 or min(self.b_ff, self.b_xx, self.b_fx) <= 0:
            raise ValueError("C and b coefficients must be positive")
        if self.kappa_vol is None:
            object.__setattr__(self, "kappa_vol", 10.0 * self.C)
        if self.kappa_vol < 0:
            raise ValueError("kappa_vol must be nonnegative")

    @property
    def B(self) -> np.ndarray:
        b = self
        return np.array([[b.b_ff, b.b_fx, b.b_fx],
                         [b.b_fx, b.b_xx, b.b_xx],
                         [b.b_fx, b.b_xx, b.b_xx]])


def green_strain(F: np.ndarray) -> np.ndarray:
    """E = (F^T F - I)/2; raises on non-positive det F."""
    F = np.asarray(F, dtype=np.float64)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise InvertedElement(f"det F = {np.min(J):.3e} <= 0")
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - np.eye(3))


def fung_q(E_fib: np.ndarray, mat: MaterialParams) -> np.ndarray:
    E_fib = np.asarray(E_fib, dtype=np.float64)
    return np.einsum("ab,...ab,...ab->...", mat.B, E_fib, E_fib)


def _check_q(Q):
    if np.any(Q > Q_OVERFLOW_LIMIT):
        raise Overflow(f"strain exponent {float(np.max(Q)):.1f} > {Q_OVERFLOW_LIMIT}")


def fung_energy(E_fib: np.ndarray, mat: MaterialParams) -> np.ndarray:
    """W = C/2 (exp(Q) - 1), per unit reference volume (Pa)."""
    Q = fung_q(E_fib, mat)
    _check_q(Q)
    return 0.5 * mat.C * (np.exp(Q) - 1.0)


def pk2_stress(E_fib: np.ndarray, mat: MaterialParams) -> np.ndarray:
    """S = dW/dE = C exp(Q) (B o E) in the fiber frame."""
    E_fib = np.asarray(E_fib, dtype=np.float64)
    Q = fung_q(E_fib, mat)
    _check_q(Q)
    return mat.C * np.exp(Q)[..., None, None] * (mat.B * E_fib)


_EYE = np.eye(3)
_SYM_DELTA = 0.5 * (np.einsum("ik,jl->ijkl", _EYE, _EYE)
                    + np.einsum("il,jk->ijkl", _EYE, _EYE))


def material_tangent(E_fib: np.ndarray, mat: MaterialParams) -> np.ndarray:
    """dS/dE as a (..., 3, 3, 3, 3) tensor with major and minor symmetry.

    The delta term is symmetrized so the tensor acts correctly on symmetric
    strain increments; contract with dE = sym(F^T dF).
    """
    E_fib = np.asarray(E_fib, dtype=np.float64)
    Q = fung_q(E_fib, mat)
    _check_q(Q)
    BE = mat.B * E_fib
    term1 = 2.0 * np.einsum("...ij,...kl->...ijkl", BE, BE)
    term2 = mat.B[..., :, :, None, None] * _SYM_DELTA
    return mat.C * np.exp(Q)[..., None, None, None, None] * (term1 + term2)


def volumetric_energy(F: np.ndarray, kappa_vol: float) -> np.ndarray:
    """W_vol = kappa/2 (J - 1)^2."""
    F = np.asarray(F, dtype=np.float64)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise InvertedElement(f"det F = {np.min(J):.3e} <= 0")
    return 0.5 * kappa_vol * (J - 1.0) ** 2


def volumetric_pk1(F: np.ndarray, kappa_vol: float) -> np.ndarray:
    """P_vol = dW_vol/dF = kappa (J-1) J F^{-T}."""
    F = np.asarray(F, dtype=np.float64)
    J = np.linalg.det(F)
    if np.any(J <= 0):
        raise InvertedElement(f"det F = {np.min(J):.3e} <= 0")
    Fit = np.swapaxes(np.linalg.inv(F), -1, -2)
    return kappa_vol * ((J - 1.0) * J)[..., None, None] * Fit


def volumetric_tangent(F: np.ndarray, kappa_vol: float) -> np.ndarray:
    """A_vol = dP_vol/dF, (..., 3,3,3,3) indexed [iJkL]."""
    F = np.asarray(F, dtype=np.float64)
    J = np.linalg.det(F)
    Fit = np.swapaxes(np.linalg.inv(F), -1, -2)
    c1 = kappa_vol * (2.0 * J - 1.0) * J
    c2 = kappa_vol * (J - 1.0) * J
    t1 = np.einsum("...,...iJ,...kL->...iJkL", c1, Fit, Fit)
    t2 = np.einsum("...,...iL,...kJ->...iJkL", c2, Fit, Fit)
    return t1 - t2
