# utils/geometry_util.py
"""
Módulo de Tipos Geométricos Compartidos.

Define los tipos de dominio usados por los dos casos de registro:

1. **PointSet**: conjunto ordenado de puntos d-dimensionales con la
   normalización aplicada (centroide y escala).
2. **Interval / Box**: rangos escalares e hiperrectángulos sobre los
   parámetros de la transformación (unidad de ramificación del BnB).
3. **Assignment**: correspondencia parcial con exactamente n_p parejas.
4. **TransformParams**: transformación afín final en unidades originales.

Incluye además la normalización, la métrica RMS y la contabilidad vec/mat/W
(convención row-major en todo el proyecto).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

#: Tolerancia relativa para declarar una escala degenerada
DEGENERATE_SCALE_TOL = 1e-12


# ============================================================
# 1) CONJUNTOS DE PUNTOS
# ============================================================

@dataclass(frozen=True)
class NormInfo:
    """Mapa inverso de la normalización: x_original = x * scale + centroid."""
    centroid: np.ndarray
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "centroid", np.asarray(self.centroid, dtype=float).copy())
        object.__setattr__(self, "scale", float(self.scale))
        if self.scale <= 0.0:
            raise ValueError(f"scale {self.scale} inválida. Debe ser > 0.")

    @classmethod
    def identity(cls, dim: int) -> "NormInfo":
        return cls(np.zeros(dim), 1.0)

    def compose(self, inner: "NormInfo") -> "NormInfo":
        """Compone self (aplicada antes) con inner (aplicada después)."""
        return NormInfo(self.centroid + self.scale * inner.centroid, self.scale * inner.scale)


@dataclass(frozen=True, eq=False)
class PointSet:
    """
    Conjunto ordenado de puntos (modelo X o escena Y).

    Atributos:
        points (np.ndarray): Matriz n×d de coordenadas (solo lectura).
        norm_info (NormInfo | None): Normalización acumulada; None si los
            puntos están en unidades originales.
    """
    points: np.ndarray
    norm_info: Optional[NormInfo] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, ndmin=2)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError("points debe ser una matriz n×d con n >= 1.")
        if pts.shape[1] not in (2, 3):
            raise ValueError(f"dim {pts.shape[1]} no soportada. Use 2 o 3.")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contiene valores no finitos.")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def __len__(self) -> int:
        return self.n

    def squared_norms(self) -> np.ndarray:
        """Normas al cuadrado por punto (x̃ / ỹ)."""
        return np.einsum("ij,ij->i", self.points, self.points)

    def denormalized(self) -> np.ndarray:
        """Aplica el mapa inverso y devuelve las coordenadas originales."""
        if self.norm_info is None:
            return self.points.copy()
        return self.points * self.norm_info.scale + self.norm_info.centroid

    def subset(self, indices: Sequence[int]) -> "PointSet":
        return PointSet(self.points[np.asarray(indices, dtype=int)], self.norm_info)


def normalize(ps: PointSet, scale: Optional[float] = None) -> PointSet:
    """
    Centra el conjunto en su centroide y lo escala a norma máxima 1.

    Args:
        ps (PointSet): Conjunto de entrada.
        scale (float, opcional): Escala impuesta en lugar de la norma máxima
            (normalización con escala compartida del caso rígido).

    Returns:
        PointSet: Conjunto normalizado; `norm_info` guarda el mapa inverso
        compuesto con cualquier normalización previa.

    Raises:
        ValueError: Si todos los puntos coinciden ("degenerate scale").
    """
    centroid = ps.points.mean(axis=0)
    centered = ps.points - centroid
    max_norm = float(np.sqrt(np.einsum("ij,ij->i", centered, centered).max()))
    reference = max(1.0, float(np.abs(ps.points).max()))
    if scale is None:
        if max_norm <= DEGENERATE_SCALE_TOL * reference:
            raise ValueError("degenerate scale: todos los puntos coinciden.")
        scale = max_norm
    elif scale <= 0.0:
        raise ValueError(f"scale {scale} inválida. Debe ser > 0.")

    step = NormInfo(centroid, scale)
    previous = ps.norm_info or NormInfo.identity(ps.dim)
    return PointSet(centered / scale, previous.compose(step))


def normalize_pair(model: PointSet, scene: PointSet, shared_scale: bool = False) -> Tuple[PointSet, PointSet]:
    """
    Normaliza modelo y escena.

    Con `shared_scale=True` ambos conjuntos se dividen por la misma escala
    (la mayor de sus normas máximas), de modo que un movimiento rígido entre
    ellos sigue siendo rígido en coordenadas normalizadas.
    """
    if model.dim != scene.dim:
        raise ValueError(f"Dimensiones incompatibles: {model.dim} vs {scene.dim}.")
    if not shared_scale:
        return normalize(model), normalize(scene)

    scales = []
    for ps in (model, scene):
        centered = ps.points - ps.points.mean(axis=0)
        scales.append(float(np.sqrt(np.einsum("ij,ij->i", centered, centered).max())))
    common = max(scales)
    if common <= DEGENERATE_SCALE_TOL:
        raise ValueError("degenerate scale: ambos conjuntos son puntuales.")
    return normalize(model, common), normalize(scene, common)


# ============================================================
# 2) INTERVALOS Y CAJAS
# ============================================================

@dataclass(frozen=True)
class Interval:
    """Rango escalar cerrado [lo, hi]."""
    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError(f"Intervalo no finito [{self.lo}, {self.hi}].")
        if self.lo > self.hi:
            raise ValueError(f"Intervalo inválido: lo={self.lo} > hi={self.hi}.")

    @classmethod
    def point(cls, value: float) -> "Interval":
        return cls(value, value)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, value: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= value <= self.hi + tol

    def straddles_zero(self) -> bool:
        return self.lo <= 0.0 <= self.hi

    def negated(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def shifted(self, offset: float) -> "Interval":
        return Interval(self.lo + offset, self.hi + offset)

    def hull(self, value: float) -> "Interval":
        return Interval(min(self.lo, value), max(self.hi, value))

    def __iter__(self) -> Iterator[float]:
        yield self.lo
        yield self.hi


@dataclass(frozen=True)
class Box:
    """Hiperrectángulo alineado a ejes: un intervalo por parámetro ramificado."""
    intervals: Tuple[Interval, ...]

    def __post_init__(self):
        ivs = tuple(self.intervals)
        if not ivs:
            raise ValueError("Box requiere al menos un intervalo.")
        for iv in ivs:
            if not isinstance(iv, Interval):
                raise ValueError(f"Elemento {iv!r} no es un Interval.")
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_bounds(cls, lows: Iterable[float], highs: Iterable[float]) -> "Box":
        return cls(tuple(Interval(lo, hi) for lo, hi in zip(lows, highs)))

    @classmethod
    def cube(cls, dim: int, bound: float) -> "Box":
        return cls.from_bounds([-bound] * dim, [bound] * dim)

    @classmethod
    def point(cls, values: Iterable[float]) -> "Box":
        return cls(tuple(Interval.point(v) for v in values))

    def __len__(self) -> int:
        return len(self.intervals)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Box(self.intervals[idx])
        return self.intervals[idx]

    def __add__(self, other: "Box") -> "Box":
        return Box(self.intervals + other.intervals)

    @property
    def lows(self) -> np.ndarray:
        return np.array([iv.lo for iv in self.intervals])

    @property
    def highs(self) -> np.ndarray:
        return np.array([iv.hi for iv in self.intervals])

    @property
    def widths(self) -> np.ndarray:
        return self.highs - self.lows

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lows + self.highs)

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, values: Sequence[float], tol: float = 0.0) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(np.all(v >= self.lows - tol) and np.all(v <= self.highs + tol))

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(other.lows >= self.lows - tol) and np.all(other.highs <= self.highs + tol))

    def clamp(self, values: Sequence[float]) -> np.ndarray:
        return np.clip(np.asarray(values, dtype=float), self.lows, self.highs)


# ============================================================
# 3) CORRESPONDENCIAS
# ============================================================

@dataclass(frozen=True)
class Assignment:
    """
    Correspondencia parcial entre modelo y escena.

    Atributos:
        matches (tuple): Parejas (i, j) ordenadas por i.
        n_x, n_y (int): Cardinalidades de modelo y escena.
        n_p (int): Número exacto de parejas.
    """
    matches: Tuple[Tuple[int, int], ...]
    n_x: int
    n_y: int
    n_p: int

    def __post_init__(self):
        pairs = tuple(sorted((int(i), int(j)) for i, j in self.matches))
        object.__setattr__(self, "matches", pairs)
        if len(pairs) != self.n_p:
            raise ValueError(f"Assignment con {len(pairs)} parejas; se esperaban n_p={self.n_p}.")
        rows = [i for i, _ in pairs]
        cols = [j for _, j in pairs]
        if len(set(rows)) != len(rows) or len(set(cols)) != len(cols):
            raise ValueError("Assignment repite una fila o una columna.")
        if any(not (0 <= i < self.n_x) for i in rows) or any(not (0 <= j < self.n_y) for j in cols):
            raise ValueError("Índices de Assignment fuera de rango.")

    @classmethod
    def from_matrix(cls, P: np.ndarray, tol: float = 1e-9) -> "Assignment":
        P = np.asarray(P, dtype=float)
        rows, cols = np.nonzero(P > 1.0 - tol)
        return cls(tuple(zip(rows.tolist(), cols.tolist())), P.shape[0], P.shape[1], int(rows.size))

    @property
    def rows(self) -> np.ndarray:
        return np.array([i for i, _ in self.matches], dtype=int)

    @property
    def cols(self) -> np.ndarray:
        return np.array([j for _, j in self.matches], dtype=int)

    def to_matrix(self) -> np.ndarray:
        P = np.zeros((self.n_x, self.n_y))
        if self.matches:
            P[self.rows, self.cols] = 1.0
        return P

    def to_vector(self) -> np.ndarray:
        """p = vec(P) con la convención row-major."""
        return vec(self.to_matrix())


# ============================================================
# 4) TRANSFORMACIÓN FINAL Y MÉTRICA
# ============================================================

@dataclass(frozen=True, eq=False)
class TransformParams:
    """Transformación y = linear · x + translation en unidades originales."""
    kind: str
    linear: np.ndarray
    translation: np.ndarray
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float)
        trans = np.asarray(self.translation, dtype=float).reshape(-1)
        if lin.shape != (trans.size, trans.size):
            raise ValueError(f"linear {lin.shape} incompatible con translation {trans.shape}.")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", trans)

    @classmethod
    def identity(cls, dim: int) -> "TransformParams":
        return cls("identity", np.eye(dim), np.zeros(dim))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.linear.T + self.translation

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "linear": self.linear.tolist(),
            "translation": self.translation.tolist(),
            **self.extras,
        }


def denormalize_affine(linear: np.ndarray, translation: np.ndarray,
                       model_info: Optional[NormInfo], scene_info: Optional[NormInfo]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lleva y' = L x' + t (coordenadas normalizadas) a unidades originales.

    Con x' = (x − c_x)/s_x e y = s_y y' + c_y:
    L_o = (s_y/s_x) L,  t_o = c_y + s_y t − L_o c_x.
    """
    L = np.asarray(linear, dtype=float)
    t = np.asarray(translation, dtype=float)
    dim = t.size
    mi = model_info or NormInfo.identity(dim)
    si = scene_info or NormInfo.identity(dim)
    L_o = (si.scale / mi.scale) * L
    t_o = si.centroid + si.scale * t - L_o @ mi.centroid
    return L_o, t_o


def rms_error(model_inliers, scene_inliers, transform: TransformParams) -> float:
    """
    Error cuadrático medio entre T(x_i) y y_σ(i) con correspondencia alineada.

    Args:
        model_inliers: PointSet o matriz n×d de inliers del modelo.
        scene_inliers: PointSet o matriz n×d de inliers de la escena, en el
            mismo orden que el modelo.
        transform (TransformParams): Transformación a evaluar.

    Raises:
        ValueError: Si las cantidades de puntos difieren.
    """
    x = model_inliers.points if isinstance(model_inliers, PointSet) else np.asarray(model_inliers, float)
    y = scene_inliers.points if isinstance(scene_inliers, PointSet) else np.asarray(scene_inliers, float)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"Cantidad de inliers distinta: {x.shape[0]} vs {y.shape[0]}.")
    if x.shape[0] == 0:
        raise ValueError("rms_error requiere al menos un inlier.")
    diff = transform.apply(x) - y
    return float(np.sqrt(np.mean(np.einsum("ij,ij->i", diff, diff))))


# ============================================================
# 5) VECTORIZACIÓN (ROW-MAJOR) Y MATRIZ W
# ============================================================

def vec(M: np.ndarray) -> np.ndarray:
    """Concatenación de filas."""
    return np.asarray(M).reshape(-1)


def mat(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inversa de `vec` para una matriz rows×cols."""
    return np.asarray(v).reshape(rows, cols)


def w_matrix(m: int, n: int, d: int) -> sp.csr_matrix:
    """
    Matriz 0/1 W de tamaño (m n d²)×(m n) con vec(C ⊗ I_d) = W vec(C).

    La entrada C_ij ocupa en C ⊗ I_d las posiciones (i d + a, j d + a), cuyo
    índice row-major es (i d + a)(n d) + j d + a.
    """
    if min(m, n, d) < 1:
        raise ValueError(f"w_matrix requiere m, n, d >= 1 (recibido {m}, {n}, {d}).")
    i, j, a = np.meshgrid(np.arange(m), np.arange(n), np.arange(d), indexing="ij")
    rows = ((i * d + a) * (n * d) + j * d + a).ravel()
    cols = (i * n + j).ravel()
    data = np.ones(rows.size)
    return sp.coo_matrix((data, (rows, cols)), shape=(m * n * d * d, m * n)).tocsr()
