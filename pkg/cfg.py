#!/usr/bin/env python3
# cfg.py

"""
Módulo de Configuración y Gestión de Entorno.

Centraliza las cotas iniciales del BnB, los límites de búsqueda, las rutas
del proyecto y el sistema de logging de los puntos de entrada. Todos los
valores pueden sobrescribirse desde un archivo `.env` o variables de entorno.
"""

from __future__ import annotations
import logging
import logging.handlers
import math
import pathlib
import sys
import traceback
import os
from typing import Callable, Optional
from dotenv import load_dotenv

load_dotenv()


def _env_bool(name: str, default: str = "false") -> bool:
    return os.getenv(name, default).strip().lower() == "true"


def _env_optional_int(name: str) -> Optional[int]:
    raw = os.getenv(name, "").strip()
    return int(raw) if raw else None


# =============================
# 1. CÓDIGOS DE SALIDA
# =============================

RC_OK = 0
RC_ERROR = 1
RC_USAGE = 2

# =============================
# 2. CONFIGURACIÓN (Solver)
# =============================

#: Controla si los mensajes INFO se muestran en consola
VERBOSE = _env_bool("VERBOSE")
#: Controla si los mensajes DEBUG se habilitan en consola y archivo
DEBUG = _env_bool("DEBUG")
#: Escribe además un log rotativo en LOGS_DIR
LOG_TO_FILE = _env_bool("LOG_TO_FILE")

#: Semiancho de la caja inicial de θ (caso lineal)
THETA_BOUND = float(os.getenv("THETA_BOUND", "3.0"))
#: Semiancho de la caja inicial de r (caso rígido)
ROT_BOUND = float(os.getenv("ROT_BOUND", str(math.pi)))
#: Semiancho de la caja inicial de t (caso rígido)
TRANS_BOUND = float(os.getenv("TRANS_BOUND", "3.0"))

#: ε = min(n_x, n_y)·ε₀
EPS0_DEFAULT = float(os.getenv("EPS0_DEFAULT", "8.0"))
#: Variante heurística: ε₀ = 0 con profundidad máxima fija
HEURISTIC_EPS0 = float(os.getenv("HEURISTIC_EPS0", "0.0"))
HEURISTIC_MAX_DEPTH = int(os.getenv("HEURISTIC_MAX_DEPTH", "10"))

MAX_NODES = int(os.getenv("MAX_NODES", "1000000"))
#: Vacío = sin límite de profundidad
MAX_DEPTH = _env_optional_int("MAX_DEPTH")

GRID_RESOLUTION = int(os.getenv("GRID_RESOLUTION", "50"))
ROTATION_GRID_CAP = int(os.getenv("ROTATION_GRID_CAP", str(9 * 200 ** 3)))
GRID_PADDING = float(os.getenv("GRID_PADDING", "0.0"))

#: n_p por defecto = NP_RATIO_DEFAULT · min(n_x, n_y)
NP_RATIO_DEFAULT = float(os.getenv("NP_RATIO_DEFAULT", "0.9"))
THREADS = int(os.getenv("THREADS", "1"))

# =============================
# 3. RUTAS Y LOGGING CONFIG
# =============================

_THIS_FILE = pathlib.Path(__file__).resolve()
PROJECT_ROOT = _THIS_FILE.parent
LOGS_DIR = pathlib.Path(os.getenv("LOGS_DIR", str(PROJECT_ROOT / "Logs")))
DATA_DIR = pathlib.Path(os.getenv("DATA_DIR", str(PROJECT_ROOT / "data" / "shapes")))
RESULTS_DIR = pathlib.Path(os.getenv("RESULTS_DIR", str(PROJECT_ROOT / "results")))

LOG_FILES_NUM = int(os.getenv("LOG_FILES_NUM", "10"))
LOG_MAX_BYTES = int(os.getenv("LOG_MAX_BYTES", str(1024 * 1024)))

#: Loggers de biblioteca que comparten los handlers del script
LIBRARY_LOGGERS = ("utils", "functions", "experiment_runner")

# =============================
# 4. LOGGING
# =============================

class SimpleFormatter(logging.Formatter):
    def format(self, record):
        original = record.levelname
        shown = "EXCEPTION" if record.exc_info else original
        record.levelname = f"{shown:<9}"
        try:
            return super().format(record)
        finally:
            # El record se comparte entre handlers.
            record.levelname = original


class HandlerLevelFilter(logging.Filter):
    """
    Filtro explícito por severidad.

    - `DEBUG` depende de `allow_debug`.
    - `INFO` depende de `allow_info`.
    - `WARNING`, `ERROR`, `CRITICAL` y excepciones siempre pasan.
    """
    def __init__(self, allow_debug: bool, allow_info: bool):
        super().__init__()
        self.allow_debug = allow_debug
        self.allow_info = allow_info

    def filter(self, record: logging.LogRecord) -> bool:
        if record.levelno == logging.DEBUG:
            return self.allow_debug
        if record.levelno == logging.INFO:
            return self.allow_info
        return record.levelno >= logging.WARNING


def _formatter() -> SimpleFormatter:
    return SimpleFormatter("%(asctime)s[%(name)s]%(levelname)s %(message)s", "%d-%b-%y(%H:%M:%S)")


def _configure(logger: logging.Logger, name: str, to_file: bool) -> None:
    """Reemplaza los handlers del logger por consola (y archivo) con los filtros actuales."""
    for h in list(logger.handlers):
        if getattr(h, "is_cfg_handler", False):
            logger.removeHandler(h)
            h.close()

    console = logging.StreamHandler(sys.stdout)
    console.is_cfg_handler = True
    console.setLevel(logging.DEBUG)
    console.setFormatter(_formatter())
    console.addFilter(HandlerLevelFilter(allow_debug=DEBUG, allow_info=VERBOSE))
    logger.addHandler(console)

    if to_file:
        LOGS_DIR.mkdir(parents=True, exist_ok=True)
        f_handler = logging.handlers.RotatingFileHandler(
            LOGS_DIR / f"{name.lower()}.log", maxBytes=LOG_MAX_BYTES,
            backupCount=LOG_FILES_NUM, encoding="utf-8",
        )
        f_handler.is_cfg_handler = True
        f_handler.setLevel(logging.DEBUG)
        f_handler.setFormatter(_formatter())
        f_handler.addFilter(HandlerLevelFilter(allow_debug=DEBUG, allow_info=True))
        logger.addHandler(f_handler)

    logger.setLevel(logging.DEBUG)
    logger.propagate = False


def set_logger(to_file: Optional[bool] = None) -> logging.Logger:
    """
    Configura logger asimétrico para el script en ejecución.

    Consola:
    - `DEBUG` solo si DEBUG=True
    - `INFO` solo si VERBOSE=True
    - `WARNING`/`ERROR`/`EXCEPTION` siempre visibles

    Archivo en `Logs/` (si LOG_TO_FILE=True):
    - `DEBUG` solo si DEBUG=True
    - `INFO`/`WARNING`/`ERROR`/`EXCEPTION` siempre visibles

    Los mismos handlers se instalan en los loggers de `LIBRARY_LOGGERS`.
    """
    try:
        name = pathlib.Path(sys.argv[0]).stem.upper() or "REGISTRATION"
    except Exception:
        name = "REGISTRATION"
    to_file = LOG_TO_FILE if to_file is None else to_file

    logger = logging.getLogger(name)
    _configure(logger, name, to_file)
    for lib in LIBRARY_LOGGERS:
        _configure(logging.getLogger(lib), name, to_file)
    return logger


# =============================
# 5. CAPTURA DE EJECUCIÓN
# =============================

def run_and_capture(func: Callable[[], int]) -> int:
    """
    Wrapper de ejecución segura para puntos de entrada (main).

    Configura el logger y convierte Ctrl+C, `SystemExit` y excepciones no
    controladas en códigos de salida.

    Returns:
        int: Código de salida (0 éxito, 1 error, 2 uso incorrecto).
    """
    log = set_logger()
    try:
        rc = func()
    except KeyboardInterrupt:
        log.warning("Interrumpido por el usuario.")
        rc = RC_OK
    except SystemExit as e:
        rc = e.code if isinstance(e.code, int) else (RC_OK if e.code is None else RC_ERROR)
    except Exception:
        log.error("Error no controlado:\n%s", traceback.format_exc())
        rc = RC_ERROR
    return int(rc if rc is not None else RC_OK)


if __name__ == "__main__":
    def debug_test():
        l = set_logger()
        l.info("Info test")
        l.warning("Warning test")
        return RC_OK
    sys.exit(run_and_capture(debug_test))
