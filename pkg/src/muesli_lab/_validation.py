"""Input validation helpers shared by the public entry points."""

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented contract."""


def check_distribution(p, atol=1e-9, name="distribution"):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1-d vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < -atol):
        raise ValidationError(f"{name} has negative or non-finite entries: {p}")
    if abs(p.sum() - 1.0) > atol:
        raise ValidationError(f"{name} sums to {p.sum():.12g}, expected 1")
    return p


def check_policy_table(table, num_rows, num_actions, atol=1e-9, name="policy"):
    """Validate a (rows, actions) table whose rows are action distributions."""
    table = np.asarray(table, dtype=float)
    if table.shape != (num_rows, num_actions):
        raise ValidationError(
            f"{name} must have shape {(num_rows, num_actions)}, got {table.shape}"
        )
    if not np.all(np.isfinite(table)) or np.any(table < -atol):
        raise ValidationError(f"{name} has negative or non-finite entries")
    sums = table.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if bad.size:
        raise ValidationError(
            f"{name} row {bad[0]} sums to {sums[bad[0]]:.12g}, expected 1"
        )
    return table


def check_finite(x, name="array"):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_positive(value, name):
    if not value > 0:
        raise ValidationError(f"{name} must be > 0, got {value}")
    return value
