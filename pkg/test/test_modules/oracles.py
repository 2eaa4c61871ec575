# test/test_modules/oracles.py
"""
Oráculos por fuerza bruta para instancias pequeñas.
"""

from typing import Callable, Tuple

import numpy as np

from utils import Assignment, iter_partial_matchings


def all_assignments(n_x: int, n_y: int, n_p: int):
    for matches in iter_partial_matchings(n_x, n_y, n_p):
        yield Assignment(matches, n_x, n_y, n_p)


def enumerate_minimum(value_of: Callable[[Assignment], float], n_x: int, n_y: int,
                      n_p: int) -> Tuple[Assignment, float]:
    """Mínimo de `value_of` sobre todas las n_p-correspondencias."""
    best, best_val = None, np.inf
    for a in all_assignments(n_x, n_y, n_p):
        v = value_of(a)
        if v < best_val:
            best, best_val = a, v
    return best, best_val


def random_vertex(n_x: int, n_y: int, n_p: int, rng: np.random.Generator) -> Assignment:
    rows = rng.choice(n_x, n_p, replace=False)
    cols = rng.choice(n_y, n_p, replace=False)
    return Assignment(tuple(zip(rows.tolist(), cols.tolist())), n_x, n_y, n_p)


def linear_energy_direct(kind_jacobian, X: np.ndarray, Y: np.ndarray, assignment: Assignment,
                         theta: np.ndarray) -> float:
    """Σ p_ij ‖y_j − J(x_i)θ‖² evaluado pareja por pareja."""
    total = 0.0
    for i, j in assignment.matches:
        r = Y[j] - kind_jacobian(X[i]) @ theta
        total += float(r @ r)
    return total


def rigid_energy_direct(X: np.ndarray, Y: np.ndarray, assignment: Assignment,
                        R: np.ndarray, t: np.ndarray) -> float:
    total = 0.0
    for i, j in assignment.matches:
        r = Y[j] - R @ X[i] - t
        total += float(r @ r)
    return total


def sample_in_box(lows: np.ndarray, highs: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(lows, highs, size=(n, len(lows)))
