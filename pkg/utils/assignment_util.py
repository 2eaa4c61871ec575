# utils/assignment_util.py
"""
Módulo de Asignación de k-Cardinalidad.

Minimiza funcionales lineales Σ c_ij p_ij sobre el politopo de
correspondencias Ω (sumas de fila y columna ≤ 1, masa total n_p). Como los
vértices de Ω son enteros, basta con resolver la asignación lineal de
k-cardinalidad:

1. **KCardinalityLapSolver**: flujo de costo mínimo por caminos aumentantes
   más cortos con potenciales (Dijkstra denso sobre costos reducidos).
2. **linear_range_over_omega**: rango [min, max] de cᵀp sobre Ω.
3. **brute_force_lap**: enumeración exhaustiva (oráculo para instancias pequeñas).
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from .geometry_util import Assignment, Interval

log = logging.getLogger(__name__)

#: Límite de tamaño para la enumeración exhaustiva
BRUTE_FORCE_MAX = 7


class InfeasibleAssignmentError(ValueError):
    """n_p fuera de [1, min(n_x, n_y)]."""


@dataclass(frozen=True, eq=False)
class CostMatrix:
    """
    Costos por pareja y cardinalidad requerida.

    Atributos:
        costs (np.ndarray): Matriz n_x × n_y de costos finitos.
        n_p (int): Número de parejas, 1 ≤ n_p ≤ min(n_x, n_y).
    """
    costs: np.ndarray
    n_p: int

    def __post_init__(self):
        c = np.array(self.costs, dtype=float, ndmin=2)
        if c.ndim != 2:
            raise ValueError("costs debe ser una matriz 2D.")
        if not np.all(np.isfinite(c)):
            raise ValueError("costs contiene valores no finitos.")
        n_p = int(self.n_p)
        if not 1 <= n_p <= min(c.shape):
            raise InfeasibleAssignmentError(
                f"n_p={n_p} infactible para una matriz {c.shape[0]}×{c.shape[1]}."
            )
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "n_p", n_p)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.costs.shape

    def negated(self) -> "CostMatrix":
        return CostMatrix(-self.costs, self.n_p)

    def value_of(self, assignment: Assignment) -> float:
        if not assignment.matches:
            return 0.0
        return float(self.costs[assignment.rows, assignment.cols].sum())


class KCardinalityLapSolver:
    """
    Asignación lineal de k-cardinalidad por caminos aumentantes más cortos.

    Red: fuente → filas (capacidad 1) → columnas (capacidad 1) → sumidero,
    flujo total n_p. Tras la k-ésima aumentación el flujo es un
    emparejamiento de costo mínimo con k parejas. Los potenciales mantienen
    los costos reducidos no negativos, de modo que cada camino se obtiene
    con Dijkstra.

    La instancia guarda estado temporal por llamada: una resolución a la vez
    por instancia.
    """

    def __init__(self):
        self._row_match = np.empty(0, dtype=int)
        self._col_match = np.empty(0, dtype=int)
        self._row_pot = np.empty(0)
        self._col_pot = np.empty(0)

    def solve(self, cm: CostMatrix) -> Tuple[Assignment, float]:
        """
        Resuelve min Σ c_ij p_ij sobre Ω.

        Returns:
            tuple: (Assignment óptima, valor óptimo).
        """
        c = cm.costs
        n_x, n_y = c.shape
        # Costos ≥ 0: desplazar todos los costos suma una constante por pareja.
        shifted = c - c.min()

        self._row_match = np.full(n_x, -1, dtype=int)
        self._col_match = np.full(n_y, -1, dtype=int)
        self._row_pot = np.zeros(n_x)
        self._col_pot = np.zeros(n_y)

        for _ in range(cm.n_p):
            self._augment(shifted)

        rows = np.nonzero(self._row_match >= 0)[0]
        matches = tuple((int(i), int(self._row_match[i])) for i in rows)
        assignment = Assignment(matches, n_x, n_y, cm.n_p)
        return assignment, cm.value_of(assignment)

    def _augment(self, c: np.ndarray) -> None:
        """Un camino más corto desde cualquier fila libre hasta una columna libre."""
        n_x, n_y = c.shape
        row_match, col_match = self._row_match, self._col_match
        row_pot, col_pot = self._row_pot, self._col_pot

        inf = np.inf
        dist_row = np.full(n_x, inf)
        dist_col = np.full(n_y, inf)
        pred_col = np.full(n_y, -1, dtype=int)
        row_done = np.zeros(n_x, dtype=bool)
        col_done = np.zeros(n_y, dtype=bool)
        dist_row[row_match < 0] = 0.0
        col_idx = np.arange(n_y)

        while True:
            r_open = np.where(row_done, inf, dist_row)
            c_open = np.where(col_done, inf, dist_col)
            ri = int(np.argmin(r_open))
            ci = int(np.argmin(c_open))
            rv, cv = r_open[ri], c_open[ci]
            if rv == inf and cv == inf:
                break
            if rv <= cv:
                row_done[ri] = True
                reduced = c[ri] + row_pot[ri] - col_pot
                cand = rv + np.maximum(reduced, 0.0)
                better = (~col_done) & (cand < dist_col) & (col_idx != row_match[ri])
                dist_col[better] = cand[better]
                pred_col[better] = ri
            else:
                col_done[ci] = True
                i = col_match[ci]
                if i >= 0 and not row_done[i] and cv < dist_row[i]:
                    # La arista inversa columna → fila emparejada tiene costo reducido 0.
                    dist_row[i] = cv

        free_cols = np.nonzero(col_match < 0)[0]
        true_dist = dist_col[free_cols] + col_pot[free_cols]
        j = int(free_cols[int(np.argmin(true_dist))])

        row_pot += np.where(np.isfinite(dist_row), dist_row, 0.0)
        col_pot += np.where(np.isfinite(dist_col), dist_col, 0.0)

        while True:
            i = int(pred_col[j])
            previous = int(row_match[i])
            row_match[i] = j
            col_match[j] = i
            if previous < 0:
                break
            j = previous


def solve_kcard_lap(cm: CostMatrix) -> Tuple[Assignment, float]:
    """Atajo: resuelve con una instancia nueva de `KCardinalityLapSolver`."""
    return KCardinalityLapSolver().solve(cm)


def linear_range_over_omega(cm: CostMatrix) -> Interval:
    """
    Rango [min cᵀp, max cᵀp] sobre Ω con dos asignaciones (la segunda sobre −c).
    """
    solver = KCardinalityLapSolver()
    _, lo = solver.solve(cm)
    _, neg_hi = solver.solve(cm.negated())
    hi = -neg_hi
    # Ambos extremos son exactos; solo se corrige ruido de redondeo.
    return Interval(min(lo, hi), max(lo, hi))


# ============================================================
# ORÁCULO POR ENUMERACIÓN
# ============================================================

def iter_partial_matchings(n_x: int, n_y: int, n_p: int) -> Iterator[Tuple[Tuple[int, int], ...]]:
    """Todas las correspondencias parciales con exactamente n_p parejas."""
    for rows in itertools.combinations(range(n_x), n_p):
        for cols in itertools.permutations(range(n_y), n_p):
            yield tuple(zip(rows, cols))


def brute_force_lap(cm: CostMatrix) -> Tuple[Assignment, float]:
    """
    Óptimo exacto por enumeración de todas las n_p-correspondencias.

    Raises:
        ValueError: Si n_x o n_y superan `BRUTE_FORCE_MAX`.
    """
    n_x, n_y = cm.shape
    if max(n_x, n_y) > BRUTE_FORCE_MAX:
        raise ValueError(f"brute_force_lap limitado a {BRUTE_FORCE_MAX} filas/columnas ({n_x}×{n_y}).")
    best_val, best = np.inf, None
    for matches in iter_partial_matchings(n_x, n_y, cm.n_p):
        val = float(sum(cm.costs[i, j] for i, j in matches))
        if val < best_val:
            best_val, best = val, matches
    return Assignment(best, n_x, n_y, cm.n_p), best_val
