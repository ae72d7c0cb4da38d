"""
Shared pydantic field types for numpy-backed models
"""
from typing import Annotated

import numpy as np
from pydantic import BeforeValidator, PlainSerializer


def _as_vector(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a vector, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 0)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _to_list(arr: np.ndarray) -> list:
    return arr.tolist()


# Read-only float arrays; serialized as nested lists
Vector = Annotated[np.ndarray, BeforeValidator(_as_vector), PlainSerializer(_to_list, return_type=list)]
Matrix = Annotated[np.ndarray, BeforeValidator(_as_matrix), PlainSerializer(_to_list, return_type=list)]
