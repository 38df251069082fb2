import numpy as np

from .data import SLOTS


def check_sequences(X, dim: int = 40, dtype=np.float32) -> list[np.ndarray]:
    """Coerce a collection of T x dim feature matrices (or FeatureSequence objects)."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValueError("expected a list of T x dim matrices, got a single 2-D array; wrap it in a list")
    out = []
    for i, x in enumerate(X):
        arr = np.asarray(getattr(x, "frames", x), dtype=dtype)
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ValueError(f"sequence {i}: expected shape (T, {dim}), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError(f"sequence {i} is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"sequence {i} contains NaN or Inf")
        out.append(arr)
    if not out:
        raise ValueError("no sequences given")
    return out


def check_intents(y) -> list[tuple[str, str, str]]:
    out = []
    for i, t in enumerate(y):
        t = tuple(str(v) for v in t)
        if len(t) != len(SLOTS):
            raise ValueError(f"target {i}: expected an (action, object, location) triple, got {t}")
        if not all(t):
            raise ValueError(f"target {i} has an empty slot")
        out.append(t)
    return out
