# utils/bnb_util.py
"""
Módulo de Ramificación y Acotamiento (BnB) ε-óptimo.

Driver genérico de búsqueda best-first sobre cajas de parámetros de la
transformación. Cada caso de registro aporta:

1. **evaluate_node**: cota inferior β(M) y asignaciones candidatas del nodo.
2. **upper_bound**: energía eliminada (cota superior) de una asignación.

El driver mantiene el incumbente, poda los nodos con β(M) ≥ E(pᵏ) − ε,
bisecta la arista más larga del nodo con menor cota y registra una traza
por iteración.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import math
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .geometry_util import Assignment, Box, Interval
from .io_util import atomic_write_bytes

log = logging.getLogger(__name__)

STATUS_CONVERGED = "converged"
STATUS_DEPTH_LIMITED = "depth_limited"
STATUS_NODE_BUDGET = "node_budget"
STATUS_RESOLUTION = "resolution"


class BnBAbort(RuntimeError):
    """Fallo en un callback del caso; conserva la traza parcial."""

    def __init__(self, message: str, trace: "BnBTrace"):
        super().__init__(message)
        self.trace = trace


# ============================================================
# 1) CONTRATO DEL CASO
# ============================================================

@dataclass(frozen=True, eq=False)
class Candidate:
    """Solución factible evaluada con la cota superior del caso."""
    value: float
    assignment: Assignment
    params: np.ndarray
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True, eq=False)
class NodeEvaluation:
    """Resultado de acotar un nodo: β(M) y asignaciones a evaluar."""
    beta: float
    candidates: Tuple[Assignment, ...]


class RegistrationCase(ABC):
    """Interfaz que el driver BnB exige a cada caso de registro."""

    @property
    @abstractmethod
    def match_scale(self) -> int:
        """min(n_x, n_y), factor de ε = min(n_x, n_y)·ε₀."""

    @abstractmethod
    def initial_box(self) -> Box:
        """Caja inicial de parámetros."""

    @abstractmethod
    def evaluate_node(self, box: Box) -> NodeEvaluation:
        """Cota inferior válida sobre la caja y candidatos factibles."""

    @abstractmethod
    def upper_bound(self, assignment: Assignment) -> Candidate:
        """Energía con los parámetros de la transformación eliminados."""


def epsilon_for(case: RegistrationCase, eps0: float) -> float:
    """ε = min(n_x, n_y)·ε₀."""
    if eps0 < 0.0:
        raise ValueError(f"eps0 {eps0} inválido. Debe ser >= 0.")
    return case.match_scale * float(eps0)


# ============================================================
# 2) NODOS, LÍMITES Y TRAZA
# ============================================================

@dataclass(frozen=True)
class BnBLimits:
    """
    Rieles de seguridad de la búsqueda.

    Atributos:
        max_nodes (int): Nodos evaluados como máximo.
        max_depth (int | None): Profundidad máxima de ramificación (None = ∞).
        threads (int): Hilos para evaluar los nodos de una iteración.
        min_width (float): Ancho bajo el cual una caja ya no se bisecta; si
            alguna caja retirada así deja el hueco abierto el estado es
            `resolution`.
    """
    max_nodes: int = 1_000_000
    max_depth: Optional[int] = None
    threads: int = 1
    min_width: float = 1e-12

    def __post_init__(self):
        if self.max_nodes < 1:
            raise ValueError(f"max_nodes {self.max_nodes} inválido. Debe ser >= 1.")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError(f"max_depth {self.max_depth} inválido. Debe ser >= 0.")
        if self.threads < 1:
            raise ValueError(f"threads {self.threads} inválido. Debe ser >= 1.")


@dataclass(eq=False)
class BnBNode:
    """Hipercubo M con su cota β(M) y el mejor candidato producido en él."""
    box: Box
    beta: float
    depth: int
    incumbent_candidate: Optional[Candidate] = None


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    best_upper: float
    best_lower: float
    n_active: int
    selected_widths: Tuple[float, ...]


@dataclass
class BnBTrace:
    """Historial por iteración y estado final de una corrida."""
    records: List[TraceRecord] = field(default_factory=list)
    status: Optional[str] = None
    flags: List[str] = field(default_factory=list)

    def add_flag(self, flag: str) -> None:
        if flag not in self.flags:
            self.flags.append(flag)

    def to_frame(self, n_dims: Optional[int] = None) -> pd.DataFrame:
        """Una fila por iteración: iter, best_upper, best_lower, n_active, w0..w{n-1}."""
        if n_dims is None:
            n_dims = max((len(r.selected_widths) for r in self.records), default=0)
        rows = []
        for r in self.records:
            widths = list(r.selected_widths) + [float("nan")] * (n_dims - len(r.selected_widths))
            rows.append([r.iteration, r.best_upper, r.best_lower, r.n_active, *widths])
        columns = ["iter", "best_upper", "best_lower", "n_active"] + [f"w{k}" for k in range(n_dims)]
        return pd.DataFrame(rows, columns=columns)

    def to_csv(self, path: Path, n_dims: Optional[int] = None) -> None:
        data = self.to_frame(n_dims).to_csv(index=False, float_format="%.17g")
        atomic_write_bytes(Path(path), data.encode("utf-8"))


@dataclass(frozen=True, eq=False)
class BnBSolution:
    """Incumbente final y resumen de la corrida."""
    candidate: Candidate
    upper_bound: float
    lower_bound: float
    epsilon: float
    status: str
    nodes_evaluated: int
    iterations: int


# ============================================================
# 3) BISECCIÓN
# ============================================================

def bisect_longest_edge(box: Box) -> Tuple[Box, Box]:
    """
    Divide la caja por el punto medio de su intervalo más ancho (empates
    al menor índice).

    Raises:
        ValueError: Si todos los intervalos tienen ancho nulo.
    """
    widths = box.widths
    k = int(np.argmax(widths))
    if widths[k] <= 0.0:
        raise ValueError("bisect_longest_edge: caja de ancho nulo en todas las dimensiones.")
    iv = box.intervals[k]
    mid = iv.mid
    left = list(box.intervals)
    right = list(box.intervals)
    left[k] = Interval(iv.lo, mid)
    right[k] = Interval(mid, iv.hi)
    return Box(tuple(left)), Box(tuple(right))


# ============================================================
# 4) DRIVER
# ============================================================

def _evaluate_boxes(case: RegistrationCase, boxes: Sequence[Box],
                    executor: Optional[ThreadPoolExecutor]) -> List[NodeEvaluation]:
    if executor is None or len(boxes) < 2:
        return [case.evaluate_node(b) for b in boxes]
    # map conserva el orden de entrada: reducción determinista.
    return list(executor.map(case.evaluate_node, boxes))


def _final_status(depth_hit: bool, width_hit: bool, upper: float, lower: float, eps: float) -> str:
    """
    Estado con la cola vacía. Las cajas retiradas por `min_width` sólo
    degradan el estado si dejan el hueco UB − LB por encima de ε.
    """
    if depth_hit:
        return STATUS_DEPTH_LIMITED
    if width_hit and upper - lower > eps + 1e-12 * max(1.0, abs(upper)):
        return STATUS_RESOLUTION
    return STATUS_CONVERGED


def run(case: RegistrationCase, initial_box: Box, eps: float,
        limits: Optional[BnBLimits] = None) -> Tuple[BnBSolution, BnBTrace]:
    """
    Búsqueda BnB ε-óptima best-first.

    Args:
        case (RegistrationCase): Callbacks de cotas del caso.
        initial_box (Box): Hipercubo inicial M.
        eps (float): Tolerancia absoluta ε ≥ 0.
        limits (BnBLimits): Límites de nodos, profundidad e hilos.

    Returns:
        tuple: (BnBSolution, BnBTrace).

    Raises:
        BnBAbort: Si un callback del caso falla; incluye la traza parcial.
    """
    if eps < 0.0 or not math.isfinite(eps):
        raise ValueError(f"eps {eps} inválido. Debe ser finito y >= 0.")
    limits = limits or BnBLimits()
    trace = BnBTrace()

    counter = itertools.count()
    heap: List[Tuple[float, int, BnBNode]] = []
    cache: Dict[Tuple[Tuple[int, int], ...], Candidate] = {}
    incumbent: Optional[Candidate] = None
    global_lower = -math.inf
    retired_lower = math.inf
    depth_hit = False
    width_hit = False
    nodes_evaluated = 0
    iteration = 0

    # (caja, profundidad, β del padre)
    pending: List[Tuple[Box, int, float]] = [(initial_box, 0, -math.inf)]
    executor = ThreadPoolExecutor(max_workers=limits.threads) if limits.threads > 1 else None

    try:
        while True:
            iteration += 1
            try:
                evaluations = _evaluate_boxes(case, [p[0] for p in pending], executor)
                nodes_evaluated += len(pending)

                improved = False
                fresh: List[BnBNode] = []
                for (box, depth, parent_beta), ev in zip(pending, evaluations):
                    # La cota del padre sigue siendo válida en cada hijo.
                    node = BnBNode(box, max(float(ev.beta), parent_beta), depth)
                    for assignment in ev.candidates:
                        cand = cache.get(assignment.matches)
                        if cand is None:
                            cand = case.upper_bound(assignment)
                            cache[assignment.matches] = cand
                            for flag in cand.flags:
                                trace.add_flag(flag)
                        if node.incumbent_candidate is None or cand.value < node.incumbent_candidate.value:
                            node.incumbent_candidate = cand
                        if incumbent is None or cand.value < incumbent.value:
                            incumbent = cand
                            improved = True
                    fresh.append(node)
            except Exception as exc:
                trace.status = "aborted"
                log.error("BnB abortado en la iteración %d: %s", iteration, exc)
                raise BnBAbort(f"Fallo evaluando nodos en la iteración {iteration}: {exc}", trace) from exc

            if incumbent is None:
                trace.status = "aborted"
                raise BnBAbort("El caso no produjo ningún candidato factible.", trace)

            threshold = incumbent.value - eps
            if improved and heap:
                heap = [item for item in heap if item[0] < threshold]
                heapq.heapify(heap)
            for node in fresh:
                if node.beta < threshold:
                    heapq.heappush(heap, (node.beta, next(counter), node))

            live_min = heap[0][0] if heap else math.inf
            global_lower = max(global_lower, min(live_min, threshold, retired_lower))
            n_active = len(heap)

            # Selección: el nodo de menor cota; los terminales se retiran.
            pending = []
            selected: Tuple[float, ...] = ()
            if nodes_evaluated < limits.max_nodes:
                while heap:
                    beta, _, node = heapq.heappop(heap)
                    if limits.max_depth is not None and node.depth >= limits.max_depth:
                        depth_hit = True
                        retired_lower = min(retired_lower, beta)
                        continue
                    if float(node.box.widths.max()) <= limits.min_width:
                        width_hit = True
                        retired_lower = min(retired_lower, beta)
                        continue
                    left, right = bisect_longest_edge(node.box)
                    pending = [(left, node.depth + 1, beta), (right, node.depth + 1, beta)]
                    selected = tuple(float(w) for w in node.box.widths)
                    break

            trace.records.append(TraceRecord(iteration, incumbent.value, global_lower, n_active, selected))
            log.debug("iter=%d UB=%.6g LB=%.6g activos=%d nodos=%d",
                      iteration, incumbent.value, global_lower, n_active, nodes_evaluated)

            if not pending:
                if heap:
                    trace.status = STATUS_NODE_BUDGET
                else:
                    trace.status = _final_status(depth_hit, width_hit, incumbent.value, global_lower, eps)
                break
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    solution = BnBSolution(
        candidate=incumbent,
        upper_bound=incumbent.value,
        lower_bound=global_lower,
        epsilon=eps,
        status=trace.status,
        nodes_evaluated=nodes_evaluated,
        iterations=iteration,
    )
    log.info("BnB %s: UB=%.6g LB=%.6g ε=%.4g nodos=%d iteraciones=%d",
             solution.status, solution.upper_bound, solution.lower_bound, eps,
             nodes_evaluated, iteration)
    return solution, trace
