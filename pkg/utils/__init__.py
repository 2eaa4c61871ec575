"""
@file utils/__init__.py
@brief Expose the registration engine at package level.
"""

from .geometry_util import (Assignment, Box, Interval, NormInfo, PointSet, TransformParams,
                            denormalize_affine, mat, normalize, normalize_pair, rms_error, vec,
                            w_matrix)
from .io_util import (atomic_write_bytes, ElapsedTimer, load_flat_config, read_point_file,
                      write_json_result, write_point_file)
from .libs_envelopes import AffineUnderestimator, EnvelopeContractError, EnvelopeUtils
from .assignment_util import (CostMatrix, InfeasibleAssignmentError, KCardinalityLapSolver,
                              brute_force_lap, iter_partial_matchings, linear_range_over_omega,
                              solve_kcard_lap)
from .boxqp_util import BoxQP, NotPsdError, minimize_box_linear, minimize_box_qp
from .bnb_util import (BnBAbort, BnBLimits, BnBSolution, BnBTrace, Candidate, RegistrationCase,
                       bisect_longest_edge, epsilon_for, run)
from .linear_case import (AssemblyError, LinearCase, LinearTransformModel, assemble, build_problem,
                          fixed_ranges, theta_to_affine)
from .rigid_case import (GridMemoryError, RigidCase, RigidParams, precompute_rotation_grid,
                         rigid_fixed_ranges, rotation_entry_ranges, rotation_from_axis_angle)
from .synthetic_util import ExperimentConfig, generate_test_pair, load_prototype, occlude
from .benchmarking import TrialMetrics, benchmark_context

__all__ = ["Assignment", "Box", "Interval", "NormInfo", "PointSet", "TransformParams",
           "denormalize_affine", "mat", "normalize", "normalize_pair", "rms_error", "vec", "w_matrix",
           "atomic_write_bytes", "ElapsedTimer", "load_flat_config", "read_point_file",
           "write_json_result", "write_point_file",
           "AffineUnderestimator", "EnvelopeContractError", "EnvelopeUtils",
           "CostMatrix", "InfeasibleAssignmentError", "KCardinalityLapSolver", "brute_force_lap",
           "iter_partial_matchings", "linear_range_over_omega", "solve_kcard_lap",
           "BoxQP", "NotPsdError", "minimize_box_linear", "minimize_box_qp",
           "BnBAbort", "BnBLimits", "BnBSolution", "BnBTrace", "Candidate", "RegistrationCase",
           "bisect_longest_edge", "epsilon_for", "run",
           "AssemblyError", "LinearCase", "LinearTransformModel", "assemble", "build_problem",
           "fixed_ranges", "theta_to_affine",
           "GridMemoryError", "RigidCase", "RigidParams", "precompute_rotation_grid",
           "rigid_fixed_ranges", "rotation_entry_ranges", "rotation_from_axis_angle",
           "ExperimentConfig", "generate_test_pair", "load_prototype", "occlude",
           "TrialMetrics", "benchmark_context"]
