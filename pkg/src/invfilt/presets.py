"""Benchmark HMMs used in the experiments."""
import numpy as np

from .errors import ValidationError


def _cycle_walk(n):
    P = np.zeros((n, n))
    for i in range(n):
        P[i, (i - 1) % n] = 0.5
        P[i, (i + 1) % n] = 0.5
    return P


# Five-state random walk on a cycle with a three-symbol sensor. P has zeros,
# so the positivity assumption fails, yet the inversion still works in practice.
CYCLE5_P = _cycle_walk(5)
CYCLE5_B = np.array([
    [0.4, 0.4, 0.2],
    [0.4, 0.4, 0.2],
    [0.4, 0.2, 0.4],
    [0.2, 0.4, 0.4],
    [0.2, 0.4, 0.4],
])

# Three states, three symbols, strictly positive.
DENSE3_P = np.array([
    [0.8, 0.1, 0.1],
    [0.05, 0.9, 0.05],
    [0.2, 0.1, 0.7],
])
DENSE3_B = np.array([
    [0.7, 0.1, 0.2],
    [0.1, 0.8, 0.1],
    [0.05, 0.05, 0.9],
])

PRESETS = {
    "cycle5": (CYCLE5_P, CYCLE5_B),
    "dense3": (DENSE3_P, DENSE3_B),
}
# names used by existing experiment configs
PRESETS["eq37"] = PRESETS["cycle5"]
PRESETS["eq38"] = PRESETS["dense3"]

for _P, _B in PRESETS.values():
    _P.setflags(write=False)
    _B.setflags(write=False)


def get_preset(name):
    """Return copies of (P, B) for a named preset."""
    try:
        P, B = PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return P.copy(), B.copy()
