# utils/linear_case.py
"""
Módulo del Caso Lineal en Parámetros (2D similitud y afín).

La energía de una correspondencia p = vec(P) y parámetros θ es

    E(p, θ) = θᵀ[mat(B p)]θ − 2 θᵀA p + ρᵀp,   mat(B p) = mat(K B₂ p) + C

y se reescribe restando D = mat(K B₂ p₀) para que los rangos de
mat(K B₂ p) − D contengan el origen. Este módulo arma (A, ρ, B, B₂, K, C, D),
precalcula los rangos fijos sobre Ω, construye la cota inferior promediada y
elimina θ para la cota superior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .assignment_util import CostMatrix, KCardinalityLapSolver, linear_range_over_omega
from .bnb_util import Candidate, NodeEvaluation, RegistrationCase
from .boxqp_util import BoxQP, minimize_box_qp
from .geometry_util import Assignment, Box, Interval, PointSet, mat, vec, w_matrix
from .libs_envelopes import EnvelopeUtils

log = logging.getLogger(__name__)

#: Filas de B que forman B₂ (índices 0-based, vectorización row-major)
B2_ROWS = {
    "similarity2d": (0, 2, 3),
    "affine2d": (0, 1, 4, 7, 10),
}
N_THETA = {"similarity2d": 4, "affine2d": 6}

#: Cota de la caja inicial de θ
THETA_BOUND = 3.0
#: Condición máxima antes de aplicar la regularización ridge
MAX_CONDITION = 1e12
RIDGE = 1e-10
#: Modos de p₀ (todos dentro de Ω)
P0_MODES = ("uniform", "rows", "vertex")


class AssemblyError(RuntimeError):
    """El armado viola la identidad de reconstrucción o C + D ⪰ 0."""


# ============================================================
# 1) MODELO DE TRANSFORMACIÓN
# ============================================================

@dataclass(frozen=True, eq=False)
class LinearTransformModel:
    """
    Transformación lineal en sus parámetros: T(x) = J(x) θ.

    Atributos:
        kind (str): 'similarity2d' o 'affine2d'.
        n_theta (int): 4 o 6.
        b2_rows (tuple | None): Filas de B que forman B₂; None = derivarlas.
        K (np.ndarray | None): Correspondencia con signo (n_θ² × |B₂|), se fija al armar.
        C (np.ndarray | None): Matriz constante n_θ×n_θ, se fija al armar.
    """
    kind: str
    n_theta: int
    b2_rows: Optional[Tuple[int, ...]] = None
    K: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in N_THETA:
            raise ValueError(f"kind '{self.kind}' no soportado. Use {sorted(N_THETA)}.")
        if self.n_theta != N_THETA[self.kind]:
            raise ValueError(f"n_theta {self.n_theta} incompatible con {self.kind}.")

    @classmethod
    def for_kind(cls, kind: str, derive_rows: bool = False) -> "LinearTransformModel":
        if kind not in N_THETA:
            raise ValueError(f"kind '{kind}' no soportado. Use {sorted(N_THETA)}.")
        return cls(kind, N_THETA[kind], None if derive_rows else B2_ROWS[kind])

    def jacobian(self, x) -> np.ndarray:
        return jacobian(self.kind, x)


def jacobian(kind: str, x) -> np.ndarray:
    """
    J(x) tal que T(x) = J(x) θ.

    similitud: [[x1, −x2, 1, 0], [x2, x1, 0, 1]]
    afín:      [[x1, x2, 0, 0, 1, 0], [0, 0, x1, x2, 0, 1]]
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != 2:
        raise ValueError(f"jacobian requiere un punto 2D (recibido {x.size}D).")
    x1, x2 = x
    if kind == "similarity2d":
        return np.array([[x1, -x2, 1.0, 0.0], [x2, x1, 0.0, 1.0]])
    if kind == "affine2d":
        return np.array([[x1, x2, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, x1, x2, 0.0, 1.0]])
    raise ValueError(f"kind '{kind}' no soportado.")


def theta_to_affine(kind: str, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(L, t) con T(x) = L x + t."""
    th = np.asarray(theta, dtype=float)
    if kind == "similarity2d":
        a, b, tx, ty = th
        return np.array([[a, -b], [b, a]]), np.array([tx, ty])
    if kind == "affine2d":
        return th[:4].reshape(2, 2), th[4:6].copy()
    raise ValueError(f"kind '{kind}' no soportado.")


# ============================================================
# 2) PROBLEMA ARMADO
# ============================================================

@dataclass(frozen=True, eq=False)
class AssembledProblem:
    """
    Datos de la energía vectorizada y rangos fijos.

    `u_ranges[k]` es el rango de (−2Ap)_k; `q_ranges[(k, l)]` el de
    [mat(K B₂ p) − D]_kl para k ≤ l con fila no nula.
    """
    model: LinearTransformModel
    X: np.ndarray
    Y: np.ndarray
    n_p: int
    A: np.ndarray
    rho: np.ndarray
    B: np.ndarray
    B2: np.ndarray
    KB2: np.ndarray
    D: np.ndarray
    p0: np.ndarray
    theta_box: Box
    u_ranges: Optional[Tuple[Interval, ...]] = None
    q_ranges: Optional[Dict[Tuple[int, int], Interval]] = None
    q_terms: Dict[Tuple[int, int], Tuple[int, float]] = field(default_factory=dict)

    @property
    def n_x(self) -> int:
        return self.X.shape[0]

    @property
    def n_y(self) -> int:
        return self.Y.shape[0]

    @property
    def n_theta(self) -> int:
        return self.model.n_theta

    @property
    def C(self) -> np.ndarray:
        return self.model.C

    def gram(self, p: np.ndarray) -> np.ndarray:
        """mat(B p) reconstruida como mat(K B₂ p) + C."""
        return mat(self.KB2 @ p, self.n_theta, self.n_theta) + self.model.C

    def energy(self, p: np.ndarray, theta: np.ndarray) -> float:
        p = np.asarray(p, dtype=float)
        th = np.asarray(theta, dtype=float)
        return float(th @ self.gram(p) @ th - 2.0 * th @ (self.A @ p) + self.rho @ p)


def _uniform_p0(n_x: int, n_y: int, n_p: int, mode: str) -> np.ndarray:
    if mode == "uniform":
        P = np.full((n_x, n_y), n_p / (n_x * n_y))
    elif mode == "rows":
        P = np.zeros((n_x, n_y))
        P[:n_p, :] = 1.0 / n_y
    elif mode == "vertex":
        P = np.zeros((n_x, n_y))
        idx = np.arange(n_p)
        P[idx, idx] = 1.0
    else:
        raise ValueError(f"p0_mode '{mode}' no soportado. Use {P0_MODES}.")
    return vec(P)


def _derive_k(B: np.ndarray, b2_rows: Optional[Tuple[int, ...]], n_p: int) -> Tuple[Tuple[int, ...], np.ndarray, np.ndarray]:
    """
    Clasifica las filas de B: filas de B₂, duplicados con signo y constantes.

    Returns:
        tuple: (filas de B₂, K con signo, C aplanada).
    """
    n_rows = B.shape[0]
    scale = max(1.0, float(np.abs(B).max()))
    tol = 1e-12 * scale

    def is_constant(row: np.ndarray) -> bool:
        return float(np.ptp(row)) <= tol

    rows = list(b2_rows) if b2_rows is not None else []
    if b2_rows is None:
        for r in range(n_rows):
            if is_constant(B[r]):
                continue
            if any(np.abs(B[r] - s * B[t]).max() <= tol for t in rows for s in (1.0, -1.0)):
                continue
            rows.append(r)

    K = np.zeros((n_rows, len(rows)))
    C_flat = np.zeros(n_rows)
    for r in range(n_rows):
        if r in rows:
            K[r, rows.index(r)] = 1.0
            continue
        if is_constant(B[r]):
            C_flat[r] = float(B[r, 0]) * n_p
            continue
        for t_idx, t in enumerate(rows):
            hit = next((s for s in (1.0, -1.0) if np.abs(B[r] - s * B[t]).max() <= tol), None)
            if hit is not None:
                K[r, t_idx] = hit
                break
        else:
            raise AssemblyError(f"Fila {r} de B no es constante ni duplicado de B₂.")
    return tuple(rows), K, C_flat


def assemble(model: LinearTransformModel, X, Y, n_p: int, p0_mode: str = "uniform",
             theta_bound: float = THETA_BOUND) -> AssembledProblem:
    """
    Arma ρ, A, B (con matrices W), B₂, K, C y D.

    Args:
        model (LinearTransformModel): Modelo de transformación.
        X, Y: Conjuntos normalizados (PointSet o matrices n×2).
        n_p (int): Número de correspondencias.
        p0_mode (str): Punto p₀ de la reescritura ('uniform' = el más difuso).
        theta_bound (float): Semiancho de la caja inicial de θ.

    Raises:
        AssemblyError: Si falla la identidad de reconstrucción o C + D ⪰ 0.
        ValueError: Si n_p es infactible.
    """
    X = X.points if isinstance(X, PointSet) else np.asarray(X, dtype=float)
    Y = Y.points if isinstance(Y, PointSet) else np.asarray(Y, dtype=float)
    n_x, n_y, d = X.shape[0], Y.shape[0], X.shape[1]
    if d != 2 or Y.shape[1] != 2:
        raise ValueError("El caso lineal requiere conjuntos 2D.")
    if not 1 <= n_p <= min(n_x, n_y):
        raise ValueError(f"n_p={n_p} infactible para n_x={n_x}, n_y={n_y}.")
    n_theta = model.n_theta

    Js = np.stack([model.jacobian(x) for x in X])                  # (n_x, d, n_θ)
    JT = np.concatenate([J.T for J in Js], axis=1)                 # n_θ × (n_x d)
    yT = Y.reshape(1, -1)                                          # 1 × (n_y d)
    A = (sp.kron(sp.csr_matrix(JT), sp.csr_matrix(yT)) @ w_matrix(n_x, n_y, d)).toarray()

    J2 = np.concatenate([J.T @ J for J in Js], axis=0)             # (n_x n_θ) × n_θ
    B = (sp.kron(sp.csr_matrix(J2.T), sp.identity(n_theta))
         @ w_matrix(n_x, 1, n_theta)
         @ sp.kron(sp.identity(n_x), np.ones((1, n_y)))).toarray()

    rho = np.tile(np.einsum("ij,ij->i", Y, Y), n_x)

    b2_rows, K, C_flat = _derive_k(B, model.b2_rows, n_p)
    B2 = B[list(b2_rows)]
    C = C_flat.reshape(n_theta, n_theta)
    model = replace(model, b2_rows=b2_rows, K=K, C=C)
    KB2 = K @ B2

    p0 = _uniform_p0(n_x, n_y, n_p, p0_mode)
    D = mat(KB2 @ p0, n_theta, n_theta)

    # Identidad de reconstrucción en p₀ y en un vértice aleatorio de Ω.
    rng = np.random.default_rng(0)
    P = np.zeros((n_x, n_y))
    P[rng.choice(n_x, n_p, replace=False), rng.choice(n_y, n_p, replace=False)] = 1.0
    for p in (p0, vec(P)):
        lhs = mat(KB2 @ p, n_theta, n_theta) + C
        rhs = mat(B @ p, n_theta, n_theta)
        if not np.allclose(lhs, rhs, rtol=1e-10, atol=1e-10):
            raise AssemblyError("Identidad de reconstrucción mat(K B₂ p) + C = mat(B p) violada.")

    min_eig = float(np.linalg.eigvalsh(0.5 * (C + D + (C + D).T)).min())
    if min_eig < -1e-8:
        raise AssemblyError(f"C + D no es semidefinida (λ_min={min_eig:.3e}).")

    # Términos trilineales: (k, l) → (fila de B₂, signo) con k ≤ l.
    q_terms: Dict[Tuple[int, int], Tuple[int, float]] = {}
    for k in range(n_theta):
        for l in range(k, n_theta):
            row = K[k * n_theta + l]
            nz = np.nonzero(row)[0]
            if nz.size:
                q_terms[(k, l)] = (int(nz[0]), float(row[nz[0]]))

    log.debug("Armado %s: n_x=%d n_y=%d n_p=%d B₂=%s", model.kind, n_x, n_y, n_p, b2_rows)
    return AssembledProblem(
        model=model, X=X, Y=Y, n_p=int(n_p), A=A, rho=rho, B=B, B2=B2, KB2=KB2,
        D=D, p0=p0, theta_box=Box.cube(n_theta, theta_bound), q_terms=q_terms,
    )


def fixed_ranges(prob: AssembledProblem) -> AssembledProblem:
    """
    Rangos sobre Ω de cada (−2Ap)_k y de cada [mat(K B₂ p) − D]_kl.

    Se calculan una sola vez; el BnB nunca los recalcula.

    Raises:
        AssemblyError: Si algún rango de mat(K B₂ p) − D no contiene el 0.
    """
    shape = (prob.n_x, prob.n_y)
    u_ranges = tuple(
        linear_range_over_omega(CostMatrix((-2.0 * prob.A[k]).reshape(shape), prob.n_p))
        for k in range(prob.n_theta)
    )

    b2_ranges: Dict[int, Interval] = {}
    q_ranges: Dict[Tuple[int, int], Interval] = {}
    for (k, l), (t, sign) in prob.q_terms.items():
        if t not in b2_ranges:
            b2_ranges[t] = linear_range_over_omega(CostMatrix(prob.B2[t].reshape(shape), prob.n_p))
        base = b2_ranges[t] if sign > 0 else b2_ranges[t].negated()
        rng_kl = base.shifted(-prob.D[k, l])
        tol = 1e-9 * max(1.0, abs(rng_kl.lo), abs(rng_kl.hi))
        if rng_kl.lo > tol or rng_kl.hi < -tol:
            raise AssemblyError(f"Rango de Q[{k},{l}] = {tuple(rng_kl)} no contiene el 0.")
        q_ranges[(k, l)] = rng_kl.hull(0.0)
    return replace(prob, u_ranges=u_ranges, q_ranges=q_ranges)


def build_problem(kind: str, X, Y, n_p: int, p0_mode: str = "uniform",
                  theta_bound: float = THETA_BOUND) -> AssembledProblem:
    """assemble + fixed_ranges."""
    model = LinearTransformModel.for_kind(kind)
    return fixed_ranges(assemble(model, X, Y, n_p, p0_mode, theta_bound))


# ============================================================
# 3) COTA INFERIOR
# ============================================================

@dataclass(frozen=True, eq=False)
class LinearLowerBound:
    """
    E_l(p, θ) = θᵀ(C+D)θ + m₀ᵀθ + m₁ᵀp + m₂ y su minimizador sobre Ω × caja.
    """
    assignment: Assignment
    theta: np.ndarray
    beta: float
    m0: np.ndarray
    m1: np.ndarray
    m2: float
    Q: np.ndarray

    def evaluate(self, p: np.ndarray, theta: np.ndarray) -> float:
        th = np.asarray(theta, dtype=float)
        return float(th @ self.Q @ th + self.m0 @ th + self.m1 @ np.asarray(p, dtype=float) + self.m2)


def lower_bound(prob: AssembledProblem, theta_box: Box,
                solver: Optional[KCardinalityLapSolver] = None) -> LinearLowerBound:
    """
    Cota inferior de E sobre Ω × theta_box.

    Cada θ_k·(−2Ap)_k se acota con la envolvente bilineal y cada
    θ_k θ_l [mat(K B₂ p) − D]_kl con la trilineal; los coeficientes sobre
    cantidades dependientes de p se devuelven a p por sus mapas lineales.
    """
    if prob.u_ranges is None or prob.q_ranges is None:
        raise ValueError("lower_bound requiere un problema con fixed_ranges.")
    n_theta = prob.n_theta
    m0 = np.zeros(n_theta)
    m1 = prob.rho.copy()
    m2 = 0.0

    for k in range(n_theta):
        env = EnvelopeUtils.bilinear_lower(theta_box[k], prob.u_ranges[k])
        c_theta, c_u = env.coeffs
        m0[k] += c_theta
        m1 += c_u * (-2.0 * prob.A[k])
        m2 += env.constant

    for (k, l), q_range in prob.q_ranges.items():
        factor = 1.0 if k == l else 2.0
        t, sign = prob.q_terms[(k, l)]
        env = EnvelopeUtils.trilinear_lower(theta_box[k], theta_box[l], q_range)
        a, b, c = env.coeffs
        m0[k] += factor * a
        m0[l] += factor * b
        m1 += (factor * c * sign) * prob.B2[t]
        m2 += factor * (env.constant - c * prob.D[k, l])

    solver = solver or KCardinalityLapSolver()
    assignment, val_p = solver.solve(CostMatrix(m1.reshape(prob.n_x, prob.n_y), prob.n_p))
    Q = prob.C + prob.D
    theta, val_theta = minimize_box_qp(BoxQP(Q, m0, theta_box))
    beta = val_theta + val_p + m2
    return LinearLowerBound(assignment, theta, float(beta), m0, m1, float(m2), Q)


# ============================================================
# 4) COTA SUPERIOR
# ============================================================

@dataclass(frozen=True, eq=False)
class LinearUpperBound:
    value: float
    theta: np.ndarray
    flags: Tuple[str, ...] = ()


def upper_bound(prob: AssembledProblem, assignment: Assignment) -> LinearUpperBound:
    """
    E(p) = ρᵀp − (Ap)ᵀ[mat(K B₂ p) + C]⁻¹(Ap) con θ = [mat(K B₂ p) + C]⁻¹ Ap.

    Si la matriz está mal condicionada (> 1e12) se suma 1e-10·I; si θ sale
    de la caja inicial se recorta y se reevalúa E(p, θ).
    """
    p = assignment.to_vector()
    M = prob.gram(p)
    b = prob.A @ p
    flags: List[str] = []

    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        log.debug("Gram mal condicionada (cond=%.3e), ridge aplicado.", cond)
        M = M + RIDGE * np.eye(prob.n_theta)
        flags.append("ridge")
    theta = np.linalg.solve(M, b)

    if not prob.theta_box.contains(theta):
        theta = prob.theta_box.clamp(theta)
        flags.append("theta_clamped")
    return LinearUpperBound(prob.energy(p, theta), theta, tuple(flags))


def assignment_at(prob: AssembledProblem, theta: np.ndarray,
                  solver: Optional[KCardinalityLapSolver] = None) -> Assignment:
    """Asignación que minimiza E(p, θ) para θ fijo: costos ‖y_j − J(x_i)θ‖²."""
    L, t = theta_to_affine(prob.model.kind, theta)
    moved = prob.X @ L.T + t
    diff = moved[:, None, :] - prob.Y[None, :, :]
    costs = np.einsum("ijk,ijk->ij", diff, diff)
    solver = solver or KCardinalityLapSolver()
    assignment, _ = solver.solve(CostMatrix(costs, prob.n_p))
    return assignment


# ============================================================
# 5) ADAPTADOR PARA EL BnB
# ============================================================

class LinearCase(RegistrationCase):
    """Callbacks del BnB para el caso lineal (θ ∈ caja de n_θ dimensiones)."""

    def __init__(self, prob: AssembledProblem):
        if prob.u_ranges is None:
            prob = fixed_ranges(prob)
        self.prob = prob

    @property
    def match_scale(self) -> int:
        return min(self.prob.n_x, self.prob.n_y)

    def initial_box(self) -> Box:
        return self.prob.theta_box

    def evaluate_node(self, box: Box) -> NodeEvaluation:
        # Un solver por llamada: las evaluaciones pueden correr en paralelo.
        solver = KCardinalityLapSolver()
        lb = lower_bound(self.prob, box, solver)
        secondary = assignment_at(self.prob, lb.theta, solver)
        candidates = (lb.assignment,) if secondary.matches == lb.assignment.matches \
            else (lb.assignment, secondary)
        return NodeEvaluation(lb.beta, candidates)

    def upper_bound(self, assignment: Assignment) -> Candidate:
        ub = upper_bound(self.prob, assignment)
        return Candidate(ub.value, assignment, ub.theta, ub.flags)
