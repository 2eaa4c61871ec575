# utils/synthetic_util.py
"""
Módulo de Generación de Pruebas Sintéticas.

Construye pares (modelo, escena) con transformación y correspondencia
conocidas para medir el error de registro:

1. **outlier**: escena = copia transformada del prototipo + outliers uniformes.
2. **occlusion_outlier**: además se elimina una región contigua del prototipo
   (los vecinos más cercanos de un punto semilla) antes de transformarlo.

Cada par es determinista por (seed, trial, nivel de perturbación).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry_util import PointSet, TransformParams, normalize
from .io_util import read_point_file

log = logging.getLogger(__name__)

TEST_KINDS = ("outlier", "occlusion_outlier")
TRANSFORM_KINDS = ("similarity2d", "affine2d", "rigid3d")
#: Inliers mínimos tras la oclusión
MIN_INLIERS = 3


def _parse_list(raw, cast) -> Tuple:
    if isinstance(raw, (list, tuple)):
        return tuple(cast(v) for v in raw)
    return tuple(cast(v) for v in str(raw).split(",") if str(v).strip())


def _parse_optional_int(raw) -> Optional[int]:
    if raw is None or str(raw).strip().lower() in ("", "none"):
        return None
    return int(raw)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Parámetros de un experimento sintético.

    Atributos:
        test_kind (str): 'outlier' u 'occlusion_outlier'.
        prototype (str): Nombre de una forma en `data/shapes/` o ruta a un archivo.
        transform (str): 'similarity2d', 'affine2d' o 'rigid3d'.
        outliers (tuple[int]): Cantidades de outliers barridas (prueba 'outlier').
        occlusions (tuple[float]): Razones de oclusión barridas ('occlusion_outlier').
        fixed_outliers (int): Outliers añadidos en cada nivel de oclusión.
        rotation_range_deg (float): Ángulo máximo; 180 = círculo o SO₃ completo.
        scale_range (tuple): Escala uniforme (solo casos 2D).
        translation_range (float): Traslación uniforme en [−v, v]^d.
        outlier_spread (float): Semiancho relativo de la región de outliers.
        np_ratios (tuple[float]): n_p = ratio · inliers reales.
        trials (int): Pruebas por punto del barrido.
        seed (int): Semilla global.
        eps0, max_depth, max_nodes, grid, padding, threads: Parámetros del solver.
        workers (int): Pruebas concurrentes.
    """
    test_kind: str = "outlier"
    prototype: str = "fish"
    transform: str = "similarity2d"
    outliers: Tuple[int, ...] = (0,)
    occlusions: Tuple[float, ...] = (0.0,)
    fixed_outliers: int = 0
    rotation_range_deg: float = 180.0
    scale_range: Tuple[float, float] = (0.5, 1.5)
    translation_range: float = 0.5
    outlier_spread: float = 1.0
    np_ratios: Tuple[float, ...] = (0.5, 0.75, 1.0)
    trials: int = 5
    seed: int = 0
    eps0: float = 8.0
    max_depth: Optional[int] = None
    max_nodes: int = 1_000_000
    grid: int = 50
    padding: float = 0.0
    threads: int = 1
    workers: int = 1
    data_dir: Optional[Path] = None

    def __post_init__(self):
        if self.test_kind not in TEST_KINDS:
            raise ValueError(f"test_kind '{self.test_kind}' inválido. Use {TEST_KINDS}.")
        if self.transform not in TRANSFORM_KINDS:
            raise ValueError(f"transform '{self.transform}' inválido. Use {TRANSFORM_KINDS}.")
        if any(k < 0 for k in self.outliers) or self.fixed_outliers < 0:
            raise ValueError("Las cantidades de outliers deben ser >= 0.")
        if any(not 0.0 <= r < 1.0 for r in self.occlusions):
            raise ValueError(f"Razones de oclusión {self.occlusions} inválidas. Deben estar en [0, 1).")
        lo, hi = self.scale_range
        if not 0.0 < lo <= hi:
            raise ValueError(f"scale_range {self.scale_range} inválido.")
        if not 0.0 <= self.rotation_range_deg <= 180.0:
            raise ValueError(f"rotation_range_deg {self.rotation_range_deg} inválido. Debe estar en [0, 180].")
        if self.translation_range < 0.0 or self.outlier_spread <= 0.0:
            raise ValueError("translation_range debe ser >= 0 y outlier_spread > 0.")
        if not self.np_ratios or any(not 0.0 < r <= 1.0 for r in self.np_ratios):
            raise ValueError(f"np_ratios {self.np_ratios} inválidos. Deben estar en (0, 1].")
        if self.trials < 1 or self.workers < 1 or self.threads < 1:
            raise ValueError("trials, workers y threads deben ser >= 1.")
        if self.eps0 < 0.0:
            raise ValueError(f"eps0 {self.eps0} inválido. Debe ser >= 0.")

    @property
    def dim(self) -> int:
        return 3 if self.transform == "rigid3d" else 2

    @property
    def levels(self) -> Tuple[float, ...]:
        """Niveles de perturbación barridos: outliers u oclusión según la prueba."""
        if self.test_kind == "outlier":
            return tuple(float(k) for k in self.outliers)
        return tuple(self.occlusions)

    @classmethod
    def from_dict(cls, raw: Dict[str, str]) -> "ExperimentConfig":
        """
        Convierte un diccionario de strings (archivo `clave=valor`) en configuración.

        Raises:
            ValueError: Ante claves desconocidas o valores inválidos.
        """
        casts = {
            "test_kind": str, "prototype": str, "transform": str,
            "outliers": lambda v: _parse_list(v, int),
            "occlusions": lambda v: _parse_list(v, float),
            "fixed_outliers": int, "rotation_range_deg": float,
            "scale_range": lambda v: _parse_list(v, float),
            "translation_range": float, "outlier_spread": float,
            "np_ratios": lambda v: _parse_list(v, float),
            "trials": int, "seed": int, "eps0": float,
            "max_depth": _parse_optional_int, "max_nodes": int,
            "grid": int, "padding": float, "threads": int, "workers": int,
            "data_dir": lambda v: Path(v) if v else None,
        }
        unknown = sorted(set(raw) - set(casts))
        if unknown:
            raise ValueError(f"Claves de configuración desconocidas: {unknown}")
        kwargs = {}
        for key, value in raw.items():
            try:
                kwargs[key] = casts[key](value)
            except (TypeError, ValueError) as e:
                raise ValueError(f"Valor inválido para '{key}': {value!r} ({e})") from e
        if "scale_range" in kwargs and len(kwargs["scale_range"]) != 2:
            raise ValueError("scale_range requiere dos valores 'lo,hi'.")
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class TestPair:
    """
    Par sintético con su verdad de terreno.

    Atributos:
        model (PointSet): Prototipo completo.
        scene (PointSet): Inliers transformados + outliers, en orden aleatorio.
        truth (TransformParams): Transformación aplicada al modelo.
        inlier_map (np.ndarray): Filas (i_modelo, j_escena) de las parejas reales.
    """
    __test__ = False

    model: PointSet
    scene: PointSet
    truth: TransformParams
    inlier_map: np.ndarray
    level: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def n_inliers(self) -> int:
        return int(self.inlier_map.shape[0])


def load_prototype(name_or_path, data_dir: Optional[Path] = None, dim: Optional[int] = None) -> PointSet:
    """
    Carga un prototipo por nombre (`<data_dir>/<name>.txt`) o por ruta y lo normaliza.
    """
    path = Path(name_or_path)
    if not path.is_file() and data_dir is not None:
        path = Path(data_dir) / f"{name_or_path}.txt"
    return normalize(read_point_file(path, dim=dim))


def random_transform(cfg: ExperimentConfig, rng: np.random.Generator) -> TransformParams:
    """Rotación aleatoria (± escala en 2D) más traslación uniforme."""
    max_angle = math.radians(cfg.rotation_range_deg)
    if cfg.dim == 2:
        angle = float(rng.uniform(-max_angle, max_angle))
        scale = float(rng.uniform(*cfg.scale_range))
        c, s = math.cos(angle), math.sin(angle)
        linear = scale * np.array([[c, -s], [s, c]])
        extras = {"angle_rad": angle, "scale": scale}
    else:
        if cfg.rotation_range_deg >= 180.0:
            rot = Rotation.random(random_state=rng)
        else:
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            rot = Rotation.from_rotvec(axis * rng.uniform(0.0, max_angle))
        linear = rot.as_matrix()
        extras = {"rotvec": rot.as_rotvec().tolist()}
    translation = rng.uniform(-cfg.translation_range, cfg.translation_range, size=cfg.dim)
    return TransformParams(cfg.transform, linear, translation, extras)


def occlude(points: np.ndarray, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """
    Índices que sobreviven a la oclusión: se eliminan los round(ratio·n)
    vecinos más cercanos de un punto semilla aleatorio.
    """
    n = points.shape[0]
    n_removed = int(round(ratio * n))
    if n_removed == 0:
        return np.arange(n)
    seed_point = points[int(rng.integers(n))]
    order = np.argsort(np.linalg.norm(points - seed_point, axis=1), kind="stable")
    return np.sort(order[n_removed:])


def generate_test_pair(cfg: ExperimentConfig, trial: int, level_index: int = 0,
                       prototype: Optional[PointSet] = None) -> TestPair:
    """
    Genera el par (modelo, escena) de una prueba.

    Args:
        cfg (ExperimentConfig): Configuración del experimento.
        trial (int): Índice de prueba.
        level_index (int): Índice dentro de `cfg.levels`.
        prototype (PointSet | None): Prototipo ya cargado (evita releer el archivo).

    Raises:
        ValueError: Si la oclusión deja menos de 3 inliers.
    """
    levels = cfg.levels
    if not 0 <= level_index < len(levels):
        raise ValueError(f"level_index {level_index} fuera de rango ({len(levels)} niveles).")
    level = levels[level_index]
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, trial, level_index]))

    model = prototype if prototype is not None else load_prototype(cfg.prototype, cfg.data_dir, dim=cfg.dim)
    if cfg.test_kind == "outlier":
        keep = np.arange(model.n)
        n_outliers = int(level)
    else:
        keep = occlude(model.points, level, rng)
        n_outliers = cfg.fixed_outliers
    if keep.size < MIN_INLIERS:
        raise ValueError(f"La oclusión {level} deja {keep.size} inliers (< {MIN_INLIERS}).")

    truth = random_transform(cfg, rng)
    inliers = truth.apply(model.points[keep])

    centre = inliers.mean(axis=0)
    half = cfg.outlier_spread * float(np.abs(inliers - centre).max())
    outliers = centre + rng.uniform(-half, half, size=(n_outliers, cfg.dim))

    stacked = np.vstack([inliers, outliers])
    perm = rng.permutation(stacked.shape[0])
    scene_points = stacked[perm]
    # inverse[k] = posición en la escena de la fila k de `stacked`
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(perm.size)
    inlier_map = np.stack([keep, inverse[: keep.size]], axis=1)

    return TestPair(
        model=PointSet(model.points.copy()),
        scene=PointSet(scene_points),
        truth=truth,
        inlier_map=inlier_map,
        level=float(level),
        extras={"n_outliers": n_outliers, "trial": trial},
    )
