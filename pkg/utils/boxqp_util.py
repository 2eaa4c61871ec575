# utils/boxqp_util.py
"""
Módulo de Programas Cuadráticos y Lineales con Cotas de Caja.

Resuelve los subproblemas de baja dimensión de la cota inferior:

1. **minimize_box_qp**: min xᵀQx + mᵀx sobre una caja (Q semidefinida).
   Newton proyectado con búsqueda de Armijo sobre el subespacio libre,
   verificación KKT y, si no se cumple, enumeración de caras.
2. **minimize_box_linear**: min tr(G R) con cotas por entrada (forma cerrada).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np
import scipy.linalg as sla

from .geometry_util import Box, Interval

log = logging.getLogger(__name__)

#: Tolerancia de simetría y de semidefinición positiva
SYM_TOL = 1e-10
PSD_TOL = 1e-8
#: Residuo KKT aceptado
KKT_TOL = 1e-8
#: Dimensión máxima para la enumeración de caras (3ⁿ)
ENUM_MAX_DIM = 8


class NotPsdError(ValueError):
    """Q no es semidefinida positiva dentro de la tolerancia."""


@dataclass(frozen=True, eq=False)
class BoxQP:
    """
    Problema min xᵀQx + mᵀx sujeto a x ∈ box.

    Atributos:
        Q (np.ndarray): Matriz simétrica semidefinida n×n.
        m (np.ndarray): Término lineal (n,).
        box (Box): Cotas de caja.
    """
    Q: np.ndarray
    m: np.ndarray
    box: Box

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float, ndmin=2)
        m = np.array(self.m, dtype=float).reshape(-1)
        n = m.size
        if Q.shape != (n, n) or len(self.box) != n:
            raise ValueError(f"Dimensiones incompatibles: Q {Q.shape}, m {m.shape}, box {len(self.box)}.")
        scale = max(1.0, float(np.abs(Q).max()))
        if np.abs(Q - Q.T).max() > SYM_TOL * scale:
            raise ValueError("Q no es simétrica.")
        Q = 0.5 * (Q + Q.T)
        min_eig = float(np.linalg.eigvalsh(Q).min())
        if min_eig < -PSD_TOL * scale:
            raise NotPsdError(f"Q no es semidefinida positiva (λ_min={min_eig:.3e}).")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.m.size

    def value(self, x: np.ndarray) -> float:
        return float(x @ self.Q @ x + self.m @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return 2.0 * self.Q @ x + self.m

    def kkt_residual(self, x: np.ndarray) -> float:
        """‖x − Π(x − ∇f)‖∞: nulo sólo en minimizadores del problema convexo."""
        g = self.gradient(x)
        return float(np.abs(x - self.box.clamp(x - g)).max())


def minimize_box_qp(prob: BoxQP) -> Tuple[np.ndarray, float]:
    """
    Minimizador global de xᵀQx + mᵀx sobre la caja.

    Returns:
        tuple: (x*, valor) con residuo KKT ≤ 1e-8 (relativo a la escala
        del gradiente).
    """
    lo, hi = prob.box.lows, prob.box.highs
    Q, m = prob.Q, prob.m

    if np.count_nonzero(Q - np.diag(np.diag(Q))) == 0:
        x = _separable_minimizer(np.diag(Q), m, lo, hi)
        return x, prob.value(x)

    x = _projected_newton(prob)
    scale = 1.0 + float(np.abs(m).max()) + float(np.abs(Q).max()) * float(np.abs(np.concatenate([lo, hi])).max())
    if prob.kkt_residual(x) <= KKT_TOL * scale:
        return x, prob.value(x)

    if prob.n > ENUM_MAX_DIM:
        log.warning("boxQP sin convergencia KKT (residuo %.3e) y n=%d excede la enumeración.",
                    prob.kkt_residual(x), prob.n)
        return x, prob.value(x)

    log.debug("boxQP: residuo KKT %.3e, enumerando caras.", prob.kkt_residual(x))
    xe = _enumerate_faces(prob)
    if prob.value(xe) <= prob.value(x):
        x = xe
    return x, prob.value(x)


def _separable_minimizer(q: np.ndarray, m: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Mínimo coordenada a coordenada de q_i x_i² + m_i x_i."""
    x = np.where(m > 0.0, lo, np.where(m < 0.0, hi, lo))
    curved = q > 0.0
    x[curved] = np.clip(-m[curved] / (2.0 * q[curved]), lo[curved], hi[curved])
    return x


def _projected_newton(prob: BoxQP, max_iter: int = 100, armijo: float = 0.1,
                      step_dec: float = 0.6, min_step: float = 1e-22) -> np.ndarray:
    """
    Newton proyectado: sobre las coordenadas libres se toma el punto de
    Newton con las acotadas fijas; búsqueda de Armijo sobre la proyección.
    """
    lo, hi = prob.box.lows, prob.box.highs
    H = 2.0 * prob.Q
    g = prob.m
    x = prob.box.center.copy()
    value = prob.value(x)

    for it in range(max_iter):
        grad = g + H @ x
        clamped = ((x <= lo) & (grad > 0.0)) | ((x >= hi) & (grad < 0.0))
        free = ~clamped
        if not free.any():
            break
        if np.linalg.norm(grad[free]) < 1e-14:
            break

        Hff = H[np.ix_(free, free)]
        rhs = g[free] + H[np.ix_(free, clamped)] @ x[clamped]
        try:
            newton = -sla.cho_solve(sla.cho_factor(Hff), rhs)
        except (np.linalg.LinAlgError, sla.LinAlgError):
            newton = -np.linalg.lstsq(Hff, rhs, rcond=None)[0]
        search = np.zeros_like(x)
        search[free] = newton - x[free]

        sdotg = float(search @ grad)
        if sdotg >= 0.0:
            # Hessiana singular en el subespacio libre: dirección de máximo descenso.
            search = np.zeros_like(x)
            search[free] = -grad[free]
            sdotg = float(search @ grad)
            if sdotg >= 0.0:
                break

        step = 1.0
        xc = np.clip(x + step * search, lo, hi)
        vc = prob.value(xc)
        while (vc - value) / (step * sdotg) < armijo:
            step *= step_dec
            if step < min_step:
                break
            xc = np.clip(x + step * search, lo, hi)
            vc = prob.value(xc)

        if vc >= value:
            break
        improvement = value - vc
        x, value = xc, vc
        if improvement < 1e-15 * (1.0 + abs(value)):
            break
    return x


def _enumerate_faces(prob: BoxQP) -> np.ndarray:
    """Recorre las 3ⁿ caras (cota inferior, superior o libre) por coordenada."""
    n = prob.n
    lo, hi = prob.box.lows, prob.box.highs
    H = 2.0 * prob.Q
    best_x, best_val = prob.box.center.copy(), np.inf

    for pattern in itertools.product((0, 1, 2), repeat=n):
        state = np.array(pattern)
        x = np.where(state == 0, lo, hi).astype(float)
        free = state == 2
        if free.any():
            fixed = ~free
            rhs = prob.m[free] + H[np.ix_(free, fixed)] @ x[fixed]
            x[free] = -np.linalg.lstsq(H[np.ix_(free, free)], rhs, rcond=None)[0]
            if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
                continue
            x = np.clip(x, lo, hi)
        val = prob.value(x)
        if val < best_val:
            best_x, best_val = x, val
    return best_x


def minimize_box_linear(c: np.ndarray, boxes: Sequence[Sequence[Interval]]) -> Tuple[np.ndarray, float]:
    """
    Minimiza tr(G R) = Σ G_ji R_ij con cotas por entrada.

    Args:
        c (np.ndarray): Matriz G (k×k).
        boxes: Matriz k×k de `Interval`, uno por entrada R_ij.

    Returns:
        tuple: (R minimizadora, valor). Cada R_ij toma la cota inferior si su
        coeficiente es > 0, la superior si es < 0 y la inferior si es 0.
    """
    G = np.asarray(c, dtype=float)
    lo = np.array([[iv.lo for iv in row] for row in boxes], dtype=float)
    hi = np.array([[iv.hi for iv in row] for row in boxes], dtype=float)
    coef = G.T
    if coef.shape != lo.shape:
        raise ValueError(f"Dimensiones incompatibles: G {G.shape}, cajas {lo.shape}.")
    R = np.where(coef < 0.0, hi, lo)
    return R, float(np.sum(coef * R))
