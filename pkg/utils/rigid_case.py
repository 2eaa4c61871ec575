# utils/rigid_case.py
"""
Módulo del Caso Rígido 3D (rotación ángulo-eje + traslación).

    E(P, R, t) = Σ p_ij ‖y_j − R x_i − t‖²
               = Σ p_ij (‖x_i‖² + ‖y_j‖²) + n_p‖t‖² + tr(R N) + tᵀu + tᵀR w

con N = −2XᵀPY, u = −2YᵀPᵀ1 y w = 2XᵀP1. Los rangos de N, u y w sobre Ω
son fijos; los de las entradas de R se leen de una malla precalculada de
rotaciones sobre el cubo [−π, π]³.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.linalg as sla
from scipy.spatial.transform import Rotation

from .assignment_util import CostMatrix, KCardinalityLapSolver, linear_range_over_omega
from .bnb_util import Candidate, NodeEvaluation, RegistrationCase
from .boxqp_util import BoxQP, minimize_box_linear, minimize_box_qp
from .geometry_util import Assignment, Box, Interval, PointSet
from .libs_envelopes import EnvelopeUtils

log = logging.getLogger(__name__)

ROT_BOUND = math.pi
TRANS_BOUND = 3.0
#: Resolución por eje de la malla de rotaciones
GRID_RESOLUTION = 50
#: Máximo de escalares almacenados por la malla (9·g³)
ROTATION_GRID_CAP = 9 * 200 ** 3
#: Ajuste de índices a nodos de la malla
GRID_SNAP_TOL = 1e-9
TAYLOR_THRESHOLD = 1e-6


class GridMemoryError(MemoryError):
    """La malla de rotaciones excede el límite configurado."""


# ============================================================
# 1) ROTACIONES
# ============================================================

@dataclass(frozen=True, eq=False)
class RigidParams:
    """Rotación ángulo-eje r (radianes) y traslación t (unidades normalizadas)."""
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float).reshape(-1)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        if r.size != 3 or t.size != 3:
            raise ValueError(f"RigidParams requiere r y t 3D (recibido {r.size}, {t.size}).")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    @classmethod
    def from_vector(cls, params: np.ndarray) -> "RigidParams":
        params = np.asarray(params, dtype=float)
        return cls(params[:3], params[3:6])

    @property
    def R(self) -> np.ndarray:
        return rotation_from_axis_angle(self.r)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.r, self.t])


def _rodrigues_batch(r: np.ndarray) -> np.ndarray:
    """
    Fórmula exponencial para un lote (N, 3) → (N, 3, 3).

    Usa [r]×² = r rᵀ − ‖r‖² I; por debajo de 1e-6 se toma la expansión de
    segundo orden I + [r]× + ½[r]×².
    """
    r = np.asarray(r, dtype=float).reshape(-1, 3)
    x, y, z = r[:, 0], r[:, 1], r[:, 2]
    sq = x * x + y * y + z * z
    theta = np.sqrt(sq)
    small = theta < TAYLOR_THRESHOLD
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))

    K = np.zeros((r.shape[0], 3, 3))
    K[:, 0, 1], K[:, 0, 2] = -z, y
    K[:, 1, 0], K[:, 1, 2] = z, -x
    K[:, 2, 0], K[:, 2, 1] = -y, x
    K2 = r[:, :, None] * r[:, None, :] - sq[:, None, None] * np.eye(3)
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * K2


def rotation_from_axis_angle(r) -> np.ndarray:
    """
    R = I + [r]× sin‖r‖/‖r‖ + [r]×² (1 − cos‖r‖)/‖r‖².

    Raises:
        ValueError: Si r no es un 3-vector finito.
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != 3 or not np.all(np.isfinite(r)):
        raise ValueError(f"r debe ser un 3-vector finito (recibido {r}).")
    return _rodrigues_batch(r[None, :])[0]


# ============================================================
# 2) MALLA DE ROTACIONES
# ============================================================

@dataclass(frozen=True, eq=False)
class RotationGrid:
    """
    Entradas de R muestreadas en g³ nodos del cubo de ángulo-eje.

    `values[i1, i2, i3]` es la matriz 3×3 en el nodo
    (axes[0][i1], axes[1][i2], axes[2][i3]).
    """
    bounds: Box
    g: int
    axes: Tuple[np.ndarray, ...]
    values: np.ndarray
    padding: float = 0.0

    @property
    def steps(self) -> np.ndarray:
        return self.bounds.widths / (self.g - 1)

    @property
    def covering_padding(self) -> float:
        """
        δ = ½‖h‖₂: cota del error de los rangos tomados sólo en nodos.

        Toda rotación de una celda dista a lo sumo δ (en ángulo-eje) de un
        vértice de la celda; exp es 1-Lipschitz y |ΔR_ij| ≤ ‖ΔR‖₂ ≤ ‖Δr‖,
        así que con `padding` ≥ δ los rangos contienen toda R de la caja.
        Con `padding` = 0 cada entrada puede quedar fuera hasta δ.
        """
        return 0.5 * float(np.linalg.norm(self.steps))

    def node(self, i1: int, i2: int, i3: int) -> np.ndarray:
        return np.array([self.axes[0][i1], self.axes[1][i2], self.axes[2][i3]])


def precompute_rotation_grid(bounds: Optional[Box] = None, g: int = GRID_RESOLUTION,
                             cap: int = ROTATION_GRID_CAP, padding: float = 0.0) -> RotationGrid:
    """
    Evalúa las 9 entradas de R en cada nodo (orden row-major sobre (i₁, i₂, i₃)).

    Raises:
        ValueError: Si g < 2 o la caja no es 3D.
        GridMemoryError: Si 9·g³ supera `cap`.
    """
    bounds = bounds or Box.cube(3, ROT_BOUND)
    if len(bounds) != 3:
        raise ValueError(f"La malla requiere una caja 3D (recibida {len(bounds)}D).")
    if g < 2:
        raise ValueError(f"Resolución g={g} inválida. Debe ser >= 2.")
    if padding < 0.0:
        raise ValueError(f"padding {padding} inválido. Debe ser >= 0.")
    n_scalars = 9 * g ** 3
    if n_scalars > cap:
        raise GridMemoryError(f"Malla de {n_scalars} escalares excede el límite {cap}.")

    axes = tuple(np.linspace(iv.lo, iv.hi, g) for iv in bounds.intervals)
    r1, r2, r3 = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([r1.ravel(), r2.ravel(), r3.ravel()], axis=1)
    values = _rodrigues_batch(pts).reshape(g, g, g, 3, 3)
    values.setflags(write=False)
    log.debug("Malla de rotaciones: g=%d, %d escalares.", g, n_scalars)
    return RotationGrid(bounds, g, axes, values, float(padding))


def _index_cover(grid: RotationGrid, rbox: Box) -> Tuple[slice, ...]:
    """Índices de los nodos que envuelven la caja: [floor(lo), ceil(hi)] por eje."""
    idx = []
    for k, iv in enumerate(rbox.intervals):
        origin = grid.bounds.intervals[k].lo
        h = grid.steps[k]
        lo = math.floor((iv.lo - origin) / h + GRID_SNAP_TOL)
        hi = math.ceil((iv.hi - origin) / h - GRID_SNAP_TOL)
        lo = min(max(lo, 0), grid.g - 1)
        hi = min(max(hi, lo), grid.g - 1)
        idx.append(slice(lo, hi + 1))
    return tuple(idx)


def rotation_entry_ranges(grid: RotationGrid, rbox: Box) -> List[List[Interval]]:
    """
    Rangos aproximados de cada R_ij sobre la caja rbox.

    Se toman los nodos desde el último nodo ≤ r̲ hasta el primero ≥ r̄ en cada
    eje: si la caja no contiene nodos quedan los 2³ que la envuelven. Con
    `grid.padding` > 0 cada intervalo se ensancha y se recorta a [−1, 1].

    Raises:
        ValueError: Si rbox no está dentro del cubo de la malla.
    """
    if len(rbox) != 3 or not grid.bounds.contains_box(rbox, tol=1e-12):
        raise ValueError("rbox debe ser 3D y estar contenida en el cubo de la malla.")
    block = grid.values[_index_cover(grid, rbox)]
    lo = block.min(axis=(0, 1, 2))
    hi = block.max(axis=(0, 1, 2))
    if grid.padding > 0.0:
        lo = np.maximum(lo - grid.padding, -1.0)
        hi = np.minimum(hi + grid.padding, 1.0)
    return [[Interval(lo[i, j], hi[i, j]) for j in range(3)] for i in range(3)]


# ============================================================
# 3) RANGOS FIJOS
# ============================================================

@dataclass(frozen=True, eq=False)
class RigidAssembled:
    """
    Conjuntos normalizados, rangos fijos sobre Ω y malla de rotaciones.

    Atributos:
        u_ranges: rango de (−2YᵀPᵀ1)_a, a = 0..2.
        n_ranges: n_ranges[b][a] es el rango de (−2XᵀPY)_ba.
        w_ranges: rango de (2XᵀP1)_b; todos contienen el 0.
        const_costs: ‖x_i‖² + ‖y_j‖² por pareja.
    """
    X: np.ndarray
    Y: np.ndarray
    n_p: int
    u_ranges: Tuple[Interval, ...]
    n_ranges: Tuple[Tuple[Interval, ...], ...]
    w_ranges: Tuple[Interval, ...]
    const_costs: np.ndarray
    grid: RotationGrid
    trans_bound: float = TRANS_BOUND

    @property
    def n_x(self) -> int:
        return self.X.shape[0]

    @property
    def n_y(self) -> int:
        return self.Y.shape[0]

    def n_costs(self, a: int, b: int) -> np.ndarray:
        """Costos de (−2XᵀPY)_ba por pareja (i, j)."""
        return -2.0 * np.outer(self.X[:, b], self.Y[:, a])

    def u_costs(self, a: int) -> np.ndarray:
        return np.broadcast_to(-2.0 * self.Y[:, a][None, :], (self.n_x, self.n_y))

    def w_costs(self, b: int) -> np.ndarray:
        return np.broadcast_to(2.0 * self.X[:, b][:, None], (self.n_x, self.n_y))

    def pair_costs(self, R: np.ndarray, t: np.ndarray) -> np.ndarray:
        """‖y_j − R x_i − t‖² para todas las parejas."""
        moved = self.X @ np.asarray(R).T + np.asarray(t)
        diff = moved[:, None, :] - self.Y[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)

    def energy(self, assignment: Assignment, R: np.ndarray, t: np.ndarray) -> float:
        if not assignment.matches:
            return 0.0
        return float(self.pair_costs(R, t)[assignment.rows, assignment.cols].sum())


def rigid_fixed_ranges(X, Y, n_p: int, grid: Optional[RotationGrid] = None,
                       trans_bound: float = TRANS_BOUND) -> RigidAssembled:
    """
    Rangos sobre Ω de −2YᵀPᵀ1, −2XᵀPY y 2XᵀP1 por asignaciones lineales.

    Raises:
        ValueError: Si los conjuntos no son 3D, n_p es infactible o algún
            rango de 2XᵀP1 no contiene el 0 (X sin centrar).
    """
    X = X.points if isinstance(X, PointSet) else np.asarray(X, dtype=float)
    Y = Y.points if isinstance(Y, PointSet) else np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != 3 or Y.shape[1] != 3:
        raise ValueError("El caso rígido requiere conjuntos 3D.")
    if not 1 <= n_p <= min(X.shape[0], Y.shape[0]):
        raise ValueError(f"n_p={n_p} infactible para n_x={X.shape[0]}, n_y={Y.shape[0]}.")
    grid = grid or precompute_rotation_grid()

    partial = RigidAssembled(X, Y, int(n_p), (), (), (), np.zeros(0), grid, trans_bound)

    def rng(costs: np.ndarray) -> Interval:
        return linear_range_over_omega(CostMatrix(np.asarray(costs), n_p))

    u_ranges = tuple(rng(partial.u_costs(a)) for a in range(3))
    n_ranges = tuple(tuple(rng(partial.n_costs(a, b)) for a in range(3)) for b in range(3))
    w_ranges = []
    for b in range(3):
        iv = rng(partial.w_costs(b))
        tol = 1e-9 * max(1.0, abs(iv.lo), abs(iv.hi))
        if iv.lo > tol or iv.hi < -tol:
            raise ValueError(f"Rango de (2XᵀP1)_{b} = {tuple(iv)} no contiene el 0: X debe estar centrado.")
        w_ranges.append(iv.hull(0.0))

    sx = np.einsum("ij,ij->i", X, X)
    sy = np.einsum("ij,ij->i", Y, Y)
    const_costs = sx[:, None] + sy[None, :]
    return RigidAssembled(X, Y, int(n_p), u_ranges, n_ranges, tuple(w_ranges),
                          const_costs, grid, trans_bound)


# ============================================================
# 4) COTAS
# ============================================================

@dataclass(frozen=True, eq=False)
class RigidLowerBound:
    """E_l = n_p‖t‖² + g₀ᵀt + tr(G₁ᵀP) + Σ g_R∘R + g₃ y sus minimizadores."""
    assignment: Assignment
    R: np.ndarray
    t: np.ndarray
    beta: float
    g0: np.ndarray
    G1: np.ndarray
    gR: np.ndarray
    g3: float


def rigid_lower_bound(asm: RigidAssembled, rbox: Box, tbox: Box,
                      solver: Optional[KCardinalityLapSolver] = None) -> RigidLowerBound:
    """
    Cota inferior de E sobre Ω × rbox × tbox.

    R se relaja a la caja de sus entradas (sin la restricción SO₃); P, R y t
    quedan separados y cada parte se minimiza por su cuenta.
    """
    r_ranges = rotation_entry_ranges(asm.grid, rbox)
    g0 = np.zeros(3)
    G1 = asm.const_costs.copy()
    gR = np.zeros((3, 3))
    g3 = 0.0

    for a in range(3):
        for b in range(3):
            env = EnvelopeUtils.bilinear_lower(r_ranges[a][b], asm.n_ranges[b][a])
            c_r, c_n = env.coeffs
            gR[a, b] += c_r
            G1 += c_n * asm.n_costs(a, b)
            g3 += env.constant

    for a in range(3):
        env = EnvelopeUtils.bilinear_lower(tbox[a], asm.u_ranges[a])
        c_t, c_u = env.coeffs
        g0[a] += c_t
        G1 += c_u * asm.u_costs(a)
        g3 += env.constant

    for a in range(3):
        for b in range(3):
            env = EnvelopeUtils.trilinear_lower(tbox[a], r_ranges[a][b], asm.w_ranges[b])
            c_t, c_r, c_w = env.coeffs
            g0[a] += c_t
            gR[a, b] += c_r
            G1 += c_w * asm.w_costs(b)
            g3 += env.constant

    solver = solver or KCardinalityLapSolver()
    assignment, val_p = solver.solve(CostMatrix(G1, asm.n_p))
    R, val_r = minimize_box_linear(gR.T, r_ranges)
    t, val_t = minimize_box_qp(BoxQP(asm.n_p * np.eye(3), g0, tbox))
    beta = val_p + val_r + val_t + g3
    return RigidLowerBound(assignment, R, t, float(beta), g0, G1, gR, float(g3))


@dataclass(frozen=True, eq=False)
class RigidUpperBound:
    value: float
    R: np.ndarray
    t: np.ndarray
    flags: Tuple[str, ...] = ()


def kabsch(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rotación y traslación de mínimos cuadrados con y ≈ R x + t para pares alineados.

    Con H = Σ (x − x̄)(y − ȳ)ᵀ y Hᵀ = UΣVᵀ: R = U diag(1, 1, det(UVᵀ)) Vᵀ.
    """
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    H = (X - mx).T @ (Y - my)
    U, _, Vt = sla.svd(H.T)
    d = 1.0 if sla.det(U @ Vt) >= 0.0 else -1.0
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    return R, my - R @ mx


def rigid_upper_bound(asm: RigidAssembled, assignment: Assignment) -> RigidUpperBound:
    """
    E(P) con t y R eliminados: Kabsch sobre las parejas de P.

    Con n_p < 3 la rotación no queda determinada: se devuelve igual la de la
    SVD y se marca `rotation_underdetermined`. Con R fija la energía es
    n_p‖t − t*‖² + cte, así que recortar t* a [−trans_bound, trans_bound]³
    da el mínimo exacto sobre la caja de t (`t_clamped`).
    """
    X_m = asm.X[assignment.rows]
    Y_m = asm.Y[assignment.cols]
    flags: List[str] = []
    if assignment.n_p < 3:
        log.warning("n_p=%d < 3: rotación indeterminada.", assignment.n_p)
        flags.append("rotation_underdetermined")
    R, t = kabsch(X_m, Y_m)
    clamped = np.clip(t, -asm.trans_bound, asm.trans_bound)
    if not np.array_equal(clamped, t):
        log.debug("t de Kabsch fuera de la caja, recortado: %s", t)
        t = clamped
        flags.append("t_clamped")
    return RigidUpperBound(asm.energy(assignment, R, t), R, t, tuple(flags))


def assignment_at_pose(asm: RigidAssembled, R: np.ndarray, t: np.ndarray,
                       solver: Optional[KCardinalityLapSolver] = None) -> Assignment:
    """Asignación que minimiza E(P, R, t) con la pose fija."""
    solver = solver or KCardinalityLapSolver()
    assignment, _ = solver.solve(CostMatrix(asm.pair_costs(R, t), asm.n_p))
    return assignment


# ============================================================
# 5) ADAPTADOR PARA EL BnB
# ============================================================

class RigidCase(RegistrationCase):
    """Callbacks del BnB sobre la caja (r, t) ∈ [−π, π]³ × [−3, 3]³."""

    def __init__(self, asm: RigidAssembled):
        self.asm = asm

    @property
    def match_scale(self) -> int:
        return min(self.asm.n_x, self.asm.n_y)

    def initial_box(self) -> Box:
        return self.asm.grid.bounds + Box.cube(3, self.asm.trans_bound)

    def evaluate_node(self, box: Box) -> NodeEvaluation:
        solver = KCardinalityLapSolver()
        rbox, tbox = box[:3], box[3:]
        lb = rigid_lower_bound(self.asm, rbox, tbox, solver)
        centre = RigidParams.from_vector(box.center)
        secondary = assignment_at_pose(self.asm, centre.R, centre.t, solver)
        candidates = (lb.assignment,) if secondary.matches == lb.assignment.matches \
            else (lb.assignment, secondary)
        return NodeEvaluation(lb.beta, candidates)

    def upper_bound(self, assignment: Assignment) -> Candidate:
        ub = rigid_upper_bound(self.asm, assignment)
        params = np.concatenate([Rotation.from_matrix(ub.R).as_rotvec(), ub.t])
        return Candidate(ub.value, assignment, params, ub.flags)
