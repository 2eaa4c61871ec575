
"""
Cotas inferiores lineales (envolventes promediadas) para monomios bilineales
y trilineales sobre cajas.

Toda cota devuelta es un `AffineUnderestimator`: coeficientes por variable y
una constante, válido sobre la caja de origen.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .geometry_util import Interval

log = logging.getLogger(__name__)


class EnvelopeContractError(ValueError):
    """La caja no cumple el patrón de signos requerido por la envolvente."""


@dataclass(frozen=True)
class AffineUnderestimator:
    """
    Función afín coeffs·v + constant, dominada por el monomio en su caja.
    """
    coeffs: Tuple[float, ...]
    constant: float

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        object.__setattr__(self, "constant", float(self.constant))

    def evaluate(self, values) -> np.ndarray:
        """
        Evalúa en un punto (k,) o en un lote de puntos (N, k).
        """
        v = np.asarray(values, dtype=float)
        return v @ np.asarray(self.coeffs) + self.constant

    def shifted(self, delta: float) -> "AffineUnderestimator":
        return AffineUnderestimator(self.coeffs, self.constant + delta)


class EnvelopeUtils:
    """
    Envolventes convexas promediadas de monomios multilineales.
    """

    #: Ancho mínimo de z para conservar la faceta l6
    DEGENERATE_WIDTH = 1e-12

    # ============================================================
    # 1) MONOMIO BILINEAL
    # ============================================================
    @staticmethod
    def bilinear_lower(ix: Interval, iy: Interval) -> AffineUnderestimator:
        """
        Promedio de las dos facetas inferiores de xy:

            (xy)_l = ½(x̲+x̄)·y + ½(y̲+ȳ)·x − ½(x̲y̲ + x̄ȳ)

        Args:
            ix (Interval): Rango de x.
            iy (Interval): Rango de y.

        Returns:
            AffineUnderestimator: coeficientes (cx, cy) y constante.
        """
        cx = 0.5 * (iy.lo + iy.hi)
        cy = 0.5 * (ix.lo + ix.hi)
        const = -0.5 * (ix.lo * iy.lo + ix.hi * iy.hi)
        return AffineUnderestimator((cx, cy), const)

    # ============================================================
    # 2) MONOMIO TRILINEAL: FACETAS
    # ============================================================
    @staticmethod
    def matches_facet_pattern(ix: Interval, iy: Interval, iz: Interval) -> bool:
        """Patrón x̲ ≤ 0, y̲ ≥ 0, z̲ ≤ 0 ≤ z̄."""
        return ix.lo <= 0.0 and iy.lo >= 0.0 and iz.lo <= 0.0 <= iz.hi

    @staticmethod
    def trilinear_facets(ix: Interval, iy: Interval, iz: Interval) -> List[AffineUnderestimator]:
        """
        Facetas individuales de la envolvente convexa de xyz para el patrón
        x̲ ≤ 0, y̲ ≥ 0, z̲ ≤ 0 ≤ z̄.

        La sexta faceta se omite cuando z̄ − z̲ es numéricamente nulo.

        Raises:
            EnvelopeContractError: Si la caja no sigue el patrón.
        """
        if not EnvelopeUtils.matches_facet_pattern(ix, iy, iz):
            raise EnvelopeContractError(
                f"Patrón de signos no soportado x={tuple(ix)}, y={tuple(iy)}, z={tuple(iz)}; "
                "use trilinear_lower para despachar."
            )
        xl, xu = ix.lo, ix.hi
        yl, yu = iy.lo, iy.hi
        zl, zu = iz.lo, iz.hi

        rows = [
            ((yu * zu, xu * zu, xu * yu), -2.0 * xu * yu * zu),
            ((yu * zl, xl * zu, xl * yu), -xl * yu * zl - xl * yu * zu),
            ((yu * zl, xl * zl, xl * yl), -xl * yu * zl - xl * yl * zl),
            ((yl * zu, xu * zl, xu * yl), -xu * yl * zu - xu * yl * zl),
            ((yl * zl, xu * zl, xl * yl), -xu * yl * zl - xl * yl * zl),
        ]
        dz = zu - zl
        if dz >= EnvelopeUtils.DEGENERATE_WIDTH:
            phi = xl * yu * zu - xu * yu * zl - xl * yl * zu + xu * yl * zu
            rows.append((
                (yl * zu, xl * zu, phi / dz),
                -phi * zl / dz - xl * yu * zu - xu * yl * zu + xu * yu * zl,
            ))
        facets = [AffineUnderestimator(c, k) for c, k in rows]
        return [EnvelopeUtils._vertex_guard(f, (ix, iy, iz)) for f in facets]

    @staticmethod
    def trilinear_lower_facets(ix: Interval, iy: Interval, iz: Interval) -> AffineUnderestimator:
        """
        Promedio de las facetas de `trilinear_facets`.

        Raises:
            EnvelopeContractError: Si la caja no sigue el patrón de signos.
        """
        facets = EnvelopeUtils.trilinear_facets(ix, iy, iz)
        coeffs = np.mean([f.coeffs for f in facets], axis=0)
        const = float(np.mean([f.constant for f in facets]))
        return EnvelopeUtils._vertex_guard(AffineUnderestimator(tuple(coeffs), const), (ix, iy, iz))

    # ============================================================
    # 3) MONOMIO TRILINEAL: AJUSTE GENÉRICO
    # ============================================================
    @staticmethod
    def trilinear_lower_generic(ix: Interval, iy: Interval, iz: Interval) -> AffineUnderestimator:
        """
        Ajuste afín por mínimos cuadrados a los 8 vértices, desplazado hacia
        abajo por la máxima violación.

        Como xyz menos una función afín es multilineal, su mínimo sobre la
        caja está en un vértice: dominar los vértices basta.
        """
        ivs = (ix, iy, iz)
        verts = EnvelopeUtils._vertices(ivs)
        values = np.prod(verts, axis=1)

        # Ejes degenerados aportan una constante, no un coeficiente.
        active = [k for k, iv in enumerate(ivs) if iv.width > 0.0]
        coeffs = np.zeros(3)
        if active:
            design = np.column_stack([verts[:, active], np.ones(len(verts))])
            sol, *_ = np.linalg.lstsq(design, values, rcond=None)
            coeffs[active] = sol[:-1]
            const = float(sol[-1])
        else:
            const = float(values[0])

        env = AffineUnderestimator(tuple(coeffs), const)
        return EnvelopeUtils._vertex_guard(env, ivs)

    # ============================================================
    # 4) DESPACHO
    # ============================================================
    @staticmethod
    def trilinear_lower(ix: Interval, iy: Interval, iz: Interval) -> AffineUnderestimator:
        """
        Cota inferior de xyz sobre la caja con despacho por simetrías.

        Coloca en la posición z una variable que contiene el 0 y busca una
        permutación de (x, y) y un cambio de signo de un número par de
        variables que lleven la caja al patrón de facetas. Si ninguna
        combinación lo logra, usa el ajuste genérico.

        Raises:
            EnvelopeContractError: Si ningún intervalo contiene el 0.
        """
        ivs = (ix, iy, iz)
        straddling = [k for k in (2, 1, 0) if ivs[k].straddles_zero()]
        if not straddling:
            raise EnvelopeContractError(
                f"Ningún intervalo contiene el 0: x={tuple(ix)}, y={tuple(iy)}, z={tuple(iz)}."
            )

        for kz in straddling:
            others = [k for k in (0, 1, 2) if k != kz]
            for ka, kb in (tuple(others), tuple(reversed(others))):
                for flips in ((), (ka, kb), (ka, kz), (kb, kz)):
                    signs = [-1.0 if k in flips else 1.0 for k in range(3)]
                    moved = [ivs[k].negated() if signs[k] < 0 else ivs[k] for k in range(3)]
                    if not EnvelopeUtils.matches_facet_pattern(moved[ka], moved[kb], moved[kz]):
                        continue
                    env = EnvelopeUtils.trilinear_lower_facets(moved[ka], moved[kb], moved[kz])
                    coeffs = [0.0, 0.0, 0.0]
                    for slot, k in enumerate((ka, kb, kz)):
                        coeffs[k] = env.coeffs[slot] * signs[k]
                    mapped = AffineUnderestimator(tuple(coeffs), env.constant)
                    return EnvelopeUtils._vertex_guard(mapped, ivs)

        log.debug("Caja sin patrón de facetas, ajuste genérico: %s", [tuple(iv) for iv in ivs])
        return EnvelopeUtils.trilinear_lower_generic(ix, iy, iz)

    # ============================================================
    # 5) AUXILIARES
    # ============================================================
    @staticmethod
    def _vertices(ivs: Sequence[Interval]) -> np.ndarray:
        return np.array(list(itertools.product(*[(iv.lo, iv.hi) for iv in ivs])), dtype=float)

    @staticmethod
    def _vertex_guard(env: AffineUnderestimator, ivs: Sequence[Interval]) -> AffineUnderestimator:
        """Baja la constante si la función supera al monomio en algún vértice."""
        verts = EnvelopeUtils._vertices(ivs)
        excess = float(np.max(env.evaluate(verts) - np.prod(verts, axis=1)))
        if excess > 0.0:
            return env.shifted(-excess)
        return env
