#!/usr/bin/env python3
"""
Módulo de Benchmarking por Corrida.

Proporciona un monitor y un context manager para medir, sin tocar el código
del solver:
  - Tiempo de pared (s)
  - Tiempo de CPU del proceso (s)
  - Delta de memoria residente (MB)
  - Hilos del proceso

Las métricas de cada prueba terminan como columnas del CSV de resultados.
"""

import time
import logging
from contextlib import contextmanager
from dataclasses import dataclass, asdict
from typing import Any, Dict, Iterator, Optional

import psutil

log = logging.getLogger(__name__)


# ============================================================================
# TIPOS DE DATOS
# ============================================================================

@dataclass
class TrialMetrics:
    """Métricas de recursos capturadas alrededor de una corrida."""
    name: str
    wall_time_s: float
    cpu_time_s: float
    rss_delta_mb: float
    rss_end_mb: float
    thread_count: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ============================================================================
# MONITOREO DEL PROCESO
# ============================================================================

class SystemMonitor:
    """Toma instantáneas del proceso antes y después de un bloque."""

    def __init__(self, process: Optional[psutil.Process] = None):
        self.process = process or psutil.Process()
        self.start_time: Optional[float] = None
        self.end_time: Optional[float] = None
        self.start_metrics: Optional[Dict[str, Any]] = None
        self.end_metrics: Optional[Dict[str, Any]] = None

    def start(self) -> None:
        self.start_metrics = self._capture_metrics()
        self.start_time = time.perf_counter()

    def stop(self) -> None:
        self.end_time = time.perf_counter()
        self.end_metrics = self._capture_metrics()

    def _capture_metrics(self) -> Dict[str, Any]:
        try:
            cpu = self.process.cpu_times()
            return {
                'cpu_time': cpu.user + cpu.system,
                'rss': self.process.memory_info().rss,
                'num_threads': self.process.num_threads(),
            }
        except (psutil.AccessDenied, psutil.NoSuchProcess):
            return {'cpu_time': 0.0, 'rss': 0, 'num_threads': 0}

    def get_elapsed_time_s(self) -> float:
        if self.start_time is None:
            return 0.0
        end = self.end_time if self.end_time is not None else time.perf_counter()
        return end - self.start_time

    def metrics(self, name: str) -> TrialMetrics:
        """Deltas entre start y stop."""
        if not self.start_metrics or not self.end_metrics:
            raise RuntimeError("SystemMonitor.metrics() requiere start() y stop().")
        mb = 1024 ** 2
        return TrialMetrics(
            name=name,
            wall_time_s=self.get_elapsed_time_s(),
            cpu_time_s=self.end_metrics['cpu_time'] - self.start_metrics['cpu_time'],
            rss_delta_mb=(self.end_metrics['rss'] - self.start_metrics['rss']) / mb,
            rss_end_mb=self.end_metrics['rss'] / mb,
            thread_count=self.end_metrics['num_threads'],
        )


# ============================================================================
# CONTEXT MANAGER Y DECORADOR
# ============================================================================

class MetricsHolder:
    """Contenedor que `benchmark_context` completa al salir del bloque."""

    def __init__(self):
        self.metrics: Optional[TrialMetrics] = None


@contextmanager
def benchmark_context(name: str = "code_block",
                      logger: Optional[logging.Logger] = None) -> Iterator[MetricsHolder]:
    """
    Mide un bloque de código.

    Uso:
        with benchmark_context("trial_3") as bench:
            ...
        bench.metrics.wall_time_s
    """
    holder = MetricsHolder()
    monitor = SystemMonitor()
    monitor.start()
    try:
        yield holder
    finally:
        monitor.stop()
        holder.metrics = monitor.metrics(name)
        (logger or log).debug("Benchmark [%s] - %.3f s", name, holder.metrics.wall_time_s)
