"""
Pointwise constitutive and configurational quantities for a compressible
Neo-Hookean solid in plane strain.

All functions are vectorised: a deformation gradient argument may be a single
2x2 array or any stack of shape (..., 2, 2).
"""
import logging

import numpy as np

from adaptopt.errors import InvalidArgumentError, InvertedElementError

logger = logging.getLogger(__name__)

EYE2 = np.eye(2)
EYE3 = np.eye(3)


class MaterialParams:
    """Lame pair of the Neo-Hookean model"""

    def __init__(self, lam=2.66, mu=0.71):
        if mu <= 0:
            raise InvalidArgumentError(f'mu must be positive, got {mu}')
        if lam + mu <= 0:
            raise InvalidArgumentError(f'lambda + mu must be positive, got {lam + mu}')
        self.lam = float(lam)
        self.mu = float(mu)

    def to_dict(self):
        return {'lambda': self.lam, 'mu': self.mu}

    def __repr__(self):
        return f'<MaterialParams lambda={self.lam} mu={self.mu}>'


class Kinematics:
    """Deformation gradient with the derived quantities every stress needs"""

    def __init__(self, F):
        self.F = np.asarray(F, dtype=float)
        F = self.F
        self.J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]

        if not np.all(np.isfinite(F)):
            raise InvertedElementError('deformation gradient is not finite')
        if np.any(self.J <= 0):
            count = int(np.sum(self.J <= 0))
            raise InvertedElementError(f'{count} point(s) with J <= 0 (min J = {np.min(self.J):.3e})')

        inv = np.empty_like(F)
        inv[..., 0, 0] = F[..., 1, 1]
        inv[..., 0, 1] = -F[..., 0, 1]
        inv[..., 1, 0] = -F[..., 1, 0]
        inv[..., 1, 1] = F[..., 0, 0]
        self.Finv = inv / self.J[..., None, None]
        self.FinvT = np.swapaxes(self.Finv, -1, -2)
        self.lnJ = np.log(self.J)

    def __repr__(self):
        return f'<Kinematics shape={self.F.shape}>'


def _kinematics(F):
    return F if isinstance(F, Kinematics) else Kinematics(F)


def strain_energy(F, m):
    """W0 = mu/2 (tr FtF + 1 - 3) - mu ln J + lambda/2 (ln J)^2"""
    k = _kinematics(F)
    trace_c = np.sum(k.F * k.F, axis=(-1, -2)) + 1.0
    return 0.5 * m.mu * (trace_c - 3.0) - m.mu * k.lnJ + 0.5 * m.lam * k.lnJ ** 2


def piola_stress(F, m):
    k = _kinematics(F)
    return m.mu * (k.F - k.FinvT) + (m.lam * k.lnJ)[..., None, None] * k.FinvT


def material_tangent(F, m):
    """A_iJkL = dP_iJ / dF_kL"""
    k = _kinematics(F)
    Finv = k.Finv
    identity = np.einsum('ik,JL->iJkL', EYE2, EYE2)
    coeff = (m.mu - m.lam * k.lnJ)[..., None, None, None, None]
    return (m.mu * identity
            + coeff * np.einsum('...Jk,...Li->...iJkL', Finv, Finv)
            + m.lam * np.einsum('...Ji,...Lk->...iJkL', Finv, Finv))


def linear_energy(H, m):
    """Small-strain energy of a displacement gradient H"""
    eps = 0.5 * (H + np.swapaxes(H, -1, -2))
    trace = np.trace(eps, axis1=-2, axis2=-1)
    return 0.5 * m.lam * trace ** 2 + m.mu * np.sum(eps * eps, axis=(-1, -2))


def linear_stress(H, m):
    eps = 0.5 * (H + np.swapaxes(H, -1, -2))
    trace = np.trace(eps, axis1=-2, axis2=-1)
    return m.lam * trace[..., None, None] * EYE2 + 2.0 * m.mu * eps


def linear_tangent(m):
    """Isotropic elasticity tensor; equals material_tangent at F = I"""
    return (m.lam * np.einsum('iJ,kL->iJkL', EYE2, EYE2)
            + m.mu * (np.einsum('ik,JL->iJkL', EYE2, EYE2) + np.einsum('iL,Jk->iJkL', EYE2, EYE2)))


def cauchy_stress(F, m):
    """3x3 true stress of the plane-strain embedding F3 = diag(F, 1)"""
    k = _kinematics(F)
    shape = k.F.shape[:-2]
    B = np.zeros(shape + (3, 3))
    B[..., :2, :2] = np.einsum('...iK,...jK->...ij', k.F, k.F)
    B[..., 2, 2] = 1.0
    sigma = m.mu * (B - EYE3) + (m.lam * k.lnJ)[..., None, None] * EYE3
    return sigma / k.J[..., None, None]


def von_mises(sigma):
    sigma = np.asarray(sigma, dtype=float)
    trace = np.trace(sigma, axis1=-2, axis2=-1)
    dev = sigma - (trace / 3.0)[..., None, None] * EYE3
    return np.sqrt(1.5 * np.sum(dev * dev, axis=(-1, -2)))


def von_mises_gradient(F, m):
    """d sigma_vm / dF; zero where the von Mises stress vanishes"""
    k = _kinematics(F)
    sigma = cauchy_stress(k, m)
    vm = von_mises(sigma)

    trace = np.trace(sigma, axis1=-2, axis2=-1)
    dev = sigma - (trace / 3.0)[..., None, None] * EYE3
    s2 = dev[..., :2, :2]

    safe_vm = np.where(vm > 0, vm, 1.0)
    coeff = 3.0 * m.mu / (k.J * safe_vm)
    grad = coeff[..., None, None] * np.einsum('...ij,...jK->...iK', s2, k.F) - vm[..., None, None] * k.FinvT
    return np.where((vm > 0)[..., None, None], grad, 0.0)


def eshelby_stress(F, m):
    """Sigma = W0 I - Ft P, energy-momentum format with no external potential"""
    k = _kinematics(F)
    W = strain_energy(k, m)
    P = piola_stress(k, m)
    return W[..., None, None] * EYE2 - np.einsum('...Ki,...KJ->...iJ', k.F, P)


class StressState:
    """All pointwise stress measures for one stack of deformation gradients"""

    def __init__(self, F, m):
        k = _kinematics(F)
        self.W0 = strain_energy(k, m)
        self.P = piola_stress(k, m)
        self.sigma = cauchy_stress(k, m)
        self.sigma_vm = von_mises(self.sigma)
        self.Sigma = self.W0[..., None, None] * EYE2 - np.einsum('...Ki,...KJ->...iJ', k.F, self.P)

    def __repr__(self):
        return f'<StressState points={self.W0.size}>'
