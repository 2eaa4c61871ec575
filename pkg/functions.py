#!/usr/bin/env python3
# functions.py

"""
Módulo de Funciones de Soporte del Registro.

Centraliza el flujo de alineación de un par de conjuntos de puntos: normaliza,
arma el caso (lineal 2D o rígido 3D), ejecuta el BnB ε-óptimo y lleva la
transformación resultante a unidades originales. También incluye el oráculo
por enumeración exhaustiva usado para verificar instancias pequeñas.
"""

import cfg

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from utils import (
    Assignment, BnBLimits, BnBSolution, BnBTrace, Box, ElapsedTimer, LinearCase,
    PointSet, RegistrationCase, RigidCase, TransformParams, build_problem,
    denormalize_affine, epsilon_for, iter_partial_matchings, normalize_pair,
    precompute_rotation_grid, rigid_fixed_ranges, run, theta_to_affine,
)
from utils.assignment_util import BRUTE_FORCE_MAX

log = logging.getLogger(__name__)

LINEAR_KINDS = ("similarity2d", "affine2d")
RIGID_KIND = "rigid3d"


# ============================================================
# 1) OPCIONES
# ============================================================

@dataclass(frozen=True)
class AlignOptions:
    """
    Parámetros de una alineación.

    Atributos:
        kind (str): 'similarity2d', 'affine2d' o 'rigid3d'.
        n_p (int | None): Correspondencias; None = NP_RATIO_DEFAULT·min(n_x, n_y).
        eps0 (float): ε = min(n_x, n_y)·ε₀.
        max_depth (int | None): Profundidad máxima del BnB.
        max_nodes (int): Presupuesto de nodos.
        grid (int): Resolución de la malla de rotaciones (caso rígido).
        padding (float): Ensanche de los rangos de la malla.
        threads (int): Hilos por iteración del BnB.
        p0_mode (str): Punto de la reescritura del caso lineal.
    """
    kind: str
    n_p: Optional[int] = None
    eps0: float = cfg.EPS0_DEFAULT
    max_depth: Optional[int] = cfg.MAX_DEPTH
    max_nodes: int = cfg.MAX_NODES
    grid: int = cfg.GRID_RESOLUTION
    padding: float = cfg.GRID_PADDING
    threads: int = cfg.THREADS
    p0_mode: str = "uniform"

    def __post_init__(self):
        if self.kind not in LINEAR_KINDS + (RIGID_KIND,):
            raise ValueError(f"Transformación '{self.kind}' no soportada.")
        if self.n_p is not None and self.n_p < 1:
            raise ValueError(f"n_p {self.n_p} inválido. Debe ser >= 1.")
        if self.eps0 < 0.0:
            raise ValueError(f"eps0 {self.eps0} inválido. Debe ser >= 0.")

    @property
    def dim(self) -> int:
        return 3 if self.kind == RIGID_KIND else 2

    def heuristic(self) -> "AlignOptions":
        """Variante heurística: ε₀ = 0 y profundidad máxima fija."""
        return replace(self, eps0=cfg.HEURISTIC_EPS0, max_depth=cfg.HEURISTIC_MAX_DEPTH)

    def resolve_np(self, n_x: int, n_y: int) -> int:
        if self.n_p is not None:
            return self.n_p
        return max(1, int(math.floor(cfg.NP_RATIO_DEFAULT * min(n_x, n_y))))


@dataclass(frozen=True, eq=False)
class AlignResult:
    """Resultado de una alineación en unidades originales."""
    options: AlignOptions
    n_p: int
    transform: TransformParams
    normalized_params: np.ndarray
    matches: Tuple[Tuple[int, int], ...]
    rms_residual: float
    solution: BnBSolution
    trace: BnBTrace
    wall_time_s: float
    flags: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        """Documento JSON del resultado."""
        transform = self.transform.to_dict()
        transform["normalized_params"] = self.normalized_params.tolist()
        return {
            "transform": transform,
            "n_p": self.n_p,
            "matches": [list(m) for m in self.matches],
            "rms_residual": self.rms_residual,
            "upper_bound": self.solution.upper_bound,
            "lower_bound": self.solution.lower_bound,
            "epsilon": self.solution.epsilon,
            "status": self.solution.status,
            "nodes_evaluated": self.solution.nodes_evaluated,
            "iterations": self.solution.iterations,
            "flags": list(self.flags),
            "wall_time_s": self.wall_time_s,
        }


# ============================================================
# 2) ARMADO DEL CASO
# ============================================================

def build_case(model: PointSet, scene: PointSet, options: AlignOptions,
               n_p: int) -> Tuple[RegistrationCase, PointSet, PointSet]:
    """
    Normaliza el par y arma el caso de registro.

    Returns:
        tuple: (caso, modelo normalizado, escena normalizada).

    Raises:
        ValueError: Dimensión incompatible con la transformación o n_p infactible.
    """
    if model.dim != options.dim or scene.dim != options.dim:
        raise ValueError(f"'{options.kind}' requiere puntos {options.dim}D "
                         f"(modelo {model.dim}D, escena {scene.dim}D).")
    if not 1 <= n_p <= min(model.n, scene.n):
        raise ValueError(f"n_p={n_p} infactible para n_x={model.n}, n_y={scene.n}.")

    if options.kind == RIGID_KIND:
        model_n, scene_n = normalize_pair(model, scene, shared_scale=True)
        grid = precompute_rotation_grid(Box.cube(3, cfg.ROT_BOUND), options.grid,
                                        cap=cfg.ROTATION_GRID_CAP, padding=options.padding)
        asm = rigid_fixed_ranges(model_n, scene_n, n_p, grid, trans_bound=cfg.TRANS_BOUND)
        return RigidCase(asm), model_n, scene_n

    model_n, scene_n = normalize_pair(model, scene)
    prob = build_problem(options.kind, model_n, scene_n, n_p, options.p0_mode, cfg.THETA_BOUND)
    return LinearCase(prob), model_n, scene_n


def params_to_transform(kind: str, params: np.ndarray, model_n: PointSet,
                        scene_n: PointSet) -> TransformParams:
    """Parámetros normalizados del incumbente → transformación en unidades originales."""
    if kind == RIGID_KIND:
        R = Rotation.from_rotvec(params[:3]).as_matrix()
        L, t = R, np.asarray(params[3:6])
    else:
        L, t = theta_to_affine(kind, params)
    L_o, t_o = denormalize_affine(L, t, model_n.norm_info, scene_n.norm_info)

    extras: Dict = {}
    if kind == "similarity2d":
        extras = {"scale": float(math.hypot(L_o[0, 0], L_o[1, 0])),
                  "angle_rad": float(math.atan2(L_o[1, 0], L_o[0, 0]))}
    elif kind == RIGID_KIND:
        extras = {"rotvec": Rotation.from_matrix(L_o).as_rotvec().tolist()}
    return TransformParams(kind, L_o, t_o, extras)


def matched_rms(model: PointSet, scene: PointSet, transform: TransformParams,
                assignment: Assignment) -> float:
    """RMS de ‖T(x_i) − y_j‖ sobre las parejas del incumbente (unidades originales)."""
    if not assignment.matches:
        return 0.0
    diff = transform.apply(model.points[assignment.rows]) - scene.points[assignment.cols]
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff))))


# ============================================================
# 3) ALINEACIÓN
# ============================================================

def align_point_sets(model: PointSet, scene: PointSet, options: AlignOptions) -> AlignResult:
    """
    Registro global ε-óptimo de `model` sobre `scene`.

    Raises:
        ValueError: Entradas inválidas.
        BnBAbort: Fallo durante la búsqueda (con traza parcial).
    """
    n_p = options.resolve_np(model.n, scene.n)
    timer = ElapsedTimer().start()

    case, model_n, scene_n = build_case(model, scene, options, n_p)
    eps = epsilon_for(case, options.eps0)
    limits = BnBLimits(max_nodes=options.max_nodes, max_depth=options.max_depth,
                       threads=options.threads)
    solution, trace = run(case, case.initial_box(), eps, limits)

    candidate = solution.candidate
    transform = params_to_transform(options.kind, candidate.params, model_n, scene_n)
    rms = matched_rms(model, scene, transform, candidate.assignment)
    wall = timer.stop()

    flags = list(trace.flags)
    if options.kind == RIGID_KIND and n_p < 3 and "rotation_underdetermined" not in flags:
        flags.append("rotation_underdetermined")
    log.info("Alineación %s: n_p=%d estado=%s E=%.6g RMS=%.4g (%.2f s)",
             options.kind, n_p, solution.status, solution.upper_bound, rms, wall)
    return AlignResult(options, n_p, transform, np.asarray(candidate.params, dtype=float),
                       candidate.assignment.matches, rms, solution, trace, wall, flags)


# ============================================================
# 4) ORÁCULO EXHAUSTIVO
# ============================================================

def exhaustive_minimum(case: RegistrationCase, n_x: int, n_y: int, n_p: int) -> Tuple[Assignment, float]:
    """
    Mínimo de la energía eliminada sobre todas las n_p-correspondencias.

    Raises:
        ValueError: Si n_x o n_y superan el tamaño enumerable.
    """
    if max(n_x, n_y) > BRUTE_FORCE_MAX:
        raise ValueError(f"Oráculo limitado a {BRUTE_FORCE_MAX} puntos por conjunto ({n_x}×{n_y}).")
    best: Optional[Assignment] = None
    best_val = math.inf
    for matches in iter_partial_matchings(n_x, n_y, n_p):
        assignment = Assignment(matches, n_x, n_y, n_p)
        value = case.upper_bound(assignment).value
        if value < best_val:
            best, best_val = assignment, value
    return best, best_val


@dataclass(frozen=True, eq=False)
class OracleReport:
    exhaustive_value: float
    exhaustive_matches: Tuple[Tuple[int, int], ...]
    bnb: AlignResult

    @property
    def agrees(self) -> bool:
        """El incumbente está dentro de [mínimo, mínimo + ε] (tolerancia numérica 1e-9)."""
        ub = self.bnb.solution.upper_bound
        tol = 1e-9 * max(1.0, abs(self.exhaustive_value))
        if ub < self.exhaustive_value - tol:
            return False
        if self.bnb.solution.status != "converged":
            return True
        return ub <= self.exhaustive_value + self.bnb.solution.epsilon + tol

    def to_dict(self) -> Dict:
        return {
            "exhaustive_value": self.exhaustive_value,
            "exhaustive_matches": [list(m) for m in self.exhaustive_matches],
            "bnb_value": self.bnb.solution.upper_bound,
            "epsilon": self.bnb.solution.epsilon,
            "status": self.bnb.solution.status,
            "agrees": self.agrees,
        }


def oracle_check(model: PointSet, scene: PointSet, options: AlignOptions) -> OracleReport:
    """Compara el incumbente del BnB con la enumeración exhaustiva."""
    n_p = options.resolve_np(model.n, scene.n)
    case, _, _ = build_case(model, scene, options, n_p)
    best, best_val = exhaustive_minimum(case, model.n, scene.n, n_p)
    result = align_point_sets(model, scene, options)
    report = OracleReport(best_val, best.matches, result)
    log.info("Oráculo: exhaustivo=%.6g BnB=%.6g ε=%.4g acuerdo=%s",
             best_val, result.solution.upper_bound, result.solution.epsilon, report.agrees)
    return report
