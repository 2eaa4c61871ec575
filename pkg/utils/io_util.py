# utils/io_util.py
"""
Módulo de Utilidades de E/S e Integridad de Datos.

Este módulo provee herramientas para el manejo seguro de archivos:

1. **Escritura Atómica**: Evita resultados corruptos o a medias si el proceso
   se interrumpe.
2. **Archivos de Puntos**: Texto plano, un punto por línea, campos separados
   por espacios y comentarios con `#`. Lectura/escritura bit a bit exacta.
3. **Configuración Plana**: Archivos `clave=valor` leídos con python-dotenv.
4. **Cronómetro**: Medición de tiempo de pared.
"""

from __future__ import annotations
from pathlib import Path
import tempfile
import os
import io
import logging
import json
import time
from typing import Any, Dict, Optional

import numpy as np
from dotenv import dotenv_values

from .geometry_util import PointSet

# Configuración del logger local
log = logging.getLogger(__name__)

#: Formato de escritura: 17 dígitos significativos reproducen el float64 exacto
POINT_FORMAT = "%.17g"


def atomic_write_bytes(target_path: Path, data: bytes) -> None:
    """
    Escribe datos en una ruta de forma atómica.

    Escribe primero en un archivo temporal del mismo directorio y luego
    reemplaza el destino en una sola operación del sistema operativo.

    Args:
        target_path (Path): Ruta del archivo final.
        data (bytes): Contenido binario a escribir.

    Raises:
        Exception: Si ocurre un error durante la escritura, sincronización
                   o reemplazo.
    """
    target_path = Path(target_path)
    target_dir = target_path.parent
    target_dir.mkdir(parents=True, exist_ok=True)

    tmp_name: Optional[Path] = None
    try:
        # El temporal vive en el mismo directorio: replace() es atómico.
        with tempfile.NamedTemporaryFile(dir=str(target_dir), delete=False) as tmpf:
            tmp_name = Path(tmpf.name)
            tmpf.write(data)
            tmpf.flush()
            os.fsync(tmpf.fileno())

        if tmp_name:
            tmp_name.replace(target_path)

    except Exception as e:
        if tmp_name and tmp_name.exists():
            try:
                tmp_name.unlink(missing_ok=True)
            except Exception:
                log.warning("Error al limpiar archivo temporal %s: %s", tmp_name, e)
        raise


# ============================================================
# ARCHIVOS DE PUNTOS
# ============================================================

def read_point_file(path: Path, dim: Optional[int] = None) -> PointSet:
    """
    Lee un conjunto de puntos en texto plano.

    Args:
        path (Path): Archivo con un punto por línea.
        dim (int | None): Dimensión esperada (2 o 3); None acepta la del archivo.

    Returns:
        PointSet: Puntos sin normalizar.

    Raises:
        FileNotFoundError: Si el archivo no existe.
        ValueError: Si el contenido está vacío, mal formado o con otra dimensión.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Archivo de puntos no encontrado: {path}")
    try:
        pts = np.loadtxt(path, comments="#", ndmin=2, dtype=float)
    except ValueError as e:
        raise ValueError(f"Archivo de puntos mal formado {path}: {e}") from e
    if pts.size == 0:
        raise ValueError(f"Archivo de puntos vacío: {path}")
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"{path}: se esperaban puntos {dim}D, se leyeron {pts.shape[1]}D.")
    return PointSet(pts)


def write_point_file(path: Path, points, header: Optional[str] = None) -> None:
    """Escribe los puntos con `%.17g` (round trip exacto) de forma atómica."""
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(pts), fmt=POINT_FORMAT,
               header=header or "", comments="# ")
    atomic_write_bytes(Path(path), buf.getvalue().encode("utf-8"))


# ============================================================
# CONFIGURACIÓN Y RESULTADOS
# ============================================================

def load_flat_config(path: Path) -> Dict[str, str]:
    """
    Lee un archivo `clave=valor` (comentarios `#`) como diccionario de strings.

    Raises:
        FileNotFoundError: Si el archivo no existe.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Archivo de configuración no encontrado: {path}")
    values = dotenv_values(path)
    return {k.strip().lower(): (v or "").strip() for k, v in values.items()}


def write_json_result(path: Path, payload: Dict[str, Any]) -> None:
    """JSON con claves ordenadas e indentación fija: misma entrada, mismos bytes."""
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True)
    atomic_write_bytes(Path(path), (text + "\n").encode("utf-8"))


class ElapsedTimer:
    """
    Cronómetro de tiempo de pared basado en `time.perf_counter`.

    Uso como context manager::

        with ElapsedTimer() as timer:
            ...
        timer.elapsed
    """

    def __init__(self):
        self._start: Optional[float] = None
        self._stop: Optional[float] = None

    def start(self) -> "ElapsedTimer":
        self._start = time.perf_counter()
        self._stop = None
        return self

    def stop(self) -> float:
        if self._start is None:
            raise RuntimeError("ElapsedTimer.stop() sin start().")
        self._stop = time.perf_counter()
        return self.elapsed

    @property
    def elapsed(self) -> float:
        """Segundos transcurridos (hasta stop() o hasta ahora)."""
        if self._start is None:
            return 0.0
        end = self._stop if self._stop is not None else time.perf_counter()
        return end - self._start

    def __enter__(self) -> "ElapsedTimer":
        return self.start()

    def __exit__(self, exc_type, exc, tb) -> None:
        self.stop()
