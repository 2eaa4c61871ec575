#!/usr/bin/env python3
# align.py

"""
Punto de Entrada de Línea de Comandos.

Subcomandos:
    align       Registra un modelo sobre una escena y escribe el resultado JSON
                más la traza CSV del BnB.
    experiment  Ejecuta un experimento sintético definido en un archivo
                `clave=valor`.
    oracle      Compara el BnB con la enumeración exhaustiva (instancias pequeñas).

Códigos de salida: 0 éxito, 1 error, 2 uso incorrecto.
"""

import cfg
import sys
import argparse
import json
from pathlib import Path
from typing import Optional, Sequence

from functions import AlignOptions, align_point_sets, oracle_check
from experiment_runner import run_experiment
from utils import (AssemblyError, BnBAbort, ExperimentConfig, GridMemoryError,
                   load_flat_config, read_point_file, write_json_result)

log = cfg.set_logger()

TRANSFORMS = ("similarity2d", "affine2d", "rigid3d")


def _add_solver_args(p: argparse.ArgumentParser, require_np: bool) -> None:
    p.add_argument("--model", required=True, type=Path, help="Archivo de puntos del modelo")
    p.add_argument("--scene", required=True, type=Path, help="Archivo de puntos de la escena")
    p.add_argument("--transform", required=True, choices=TRANSFORMS)
    p.add_argument("--np", dest="n_p", type=int, required=require_np,
                   help="Número de correspondencias n_p")
    p.add_argument("--eps0", type=float, default=cfg.EPS0_DEFAULT, help="ε = min(n_x, n_y)·ε₀")
    p.add_argument("--max-depth", type=int, default=cfg.MAX_DEPTH)
    p.add_argument("--max-nodes", type=int, default=cfg.MAX_NODES)
    p.add_argument("--grid", type=int, default=cfg.GRID_RESOLUTION,
                   help="Resolución de la malla de rotaciones (rigid3d)")
    p.add_argument("--padding", type=float, default=cfg.GRID_PADDING)
    p.add_argument("--threads", type=int, default=cfg.THREADS)
    p.add_argument("--p0", dest="p0_mode", choices=("uniform", "rows", "vertex"), default="uniform")
    p.add_argument("--heuristic", action="store_true",
                   help=f"ε₀={cfg.HEURISTIC_EPS0:g} y profundidad máxima {cfg.HEURISTIC_MAX_DEPTH}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="align", description="Registro global ε-óptimo de conjuntos de puntos.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_align = sub.add_parser("align", help="Alinea un par de archivos de puntos")
    _add_solver_args(p_align, require_np=True)
    p_align.add_argument("--out", required=True, type=Path, help="Archivo JSON de resultado")

    p_exp = sub.add_parser("experiment", help="Experimento sintético")
    p_exp.add_argument("--config", required=True, type=Path)
    p_exp.add_argument("--out", type=Path, default=cfg.RESULTS_DIR, help="Directorio de salida")

    p_oracle = sub.add_parser("oracle", help="Verificación por enumeración exhaustiva")
    _add_solver_args(p_oracle, require_np=True)
    p_oracle.add_argument("--out", type=Path, default=None, help="Reporte JSON opcional")
    return parser


def _options(args: argparse.Namespace) -> AlignOptions:
    options = AlignOptions(
        kind=args.transform, n_p=args.n_p, eps0=args.eps0, max_depth=args.max_depth,
        max_nodes=args.max_nodes, grid=args.grid, padding=args.padding,
        threads=args.threads, p0_mode=args.p0_mode,
    )
    return options.heuristic() if args.heuristic else options


def trace_path_for(out: Path) -> Path:
    """`<stem>.trace.csv` junto al resultado."""
    return out.with_name(f"{out.stem}.trace.csv")


def cmd_align(args: argparse.Namespace) -> int:
    options = _options(args)
    model = read_point_file(args.model, dim=options.dim)
    scene = read_point_file(args.scene, dim=options.dim)
    result = align_point_sets(model, scene, options)
    write_json_result(args.out, result.to_dict())
    result.trace.to_csv(trace_path_for(args.out), n_dims=len(result.normalized_params))
    log.info("Resultado escrito en %s", args.out)
    return cfg.RC_OK


def cmd_experiment(args: argparse.Namespace) -> int:
    exp = ExperimentConfig.from_dict(load_flat_config(args.config))
    _, summary = run_experiment(exp, args.out)
    log.info("Resumen:\n%s", summary.to_string(index=False))
    return cfg.RC_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    options = _options(args)
    model = read_point_file(args.model, dim=options.dim)
    scene = read_point_file(args.scene, dim=options.dim)
    report = oracle_check(model, scene, options)
    payload = report.to_dict()
    if args.out is not None:
        write_json_result(args.out, payload)
    print(json.dumps(payload, sort_keys=True))
    return cfg.RC_OK if report.agrees else cfg.RC_ERROR


COMMANDS = {"align": cmd_align, "experiment": cmd_experiment, "oracle": cmd_oracle}


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Analiza los argumentos y despacha el subcomando.

    Returns:
        int: RC_OK, RC_ERROR o RC_USAGE.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv) if argv is not None else None)
    except SystemExit as e:
        # argparse sale con 2 ante errores de uso y con 0 para --help.
        return int(e.code) if isinstance(e.code, int) else cfg.RC_USAGE

    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ValueError, AssemblyError, GridMemoryError, BnBAbort) as e:
        log.error("%s: %s", type(e).__name__, e)
        return cfg.RC_ERROR


if __name__ == "__main__":
    rc = cfg.run_and_capture(cli_main)
    sys.exit(rc)
