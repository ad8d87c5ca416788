"""Argument checks shared by the estimator wrappers and the CLI."""

from __future__ import annotations

import numbers

from .recon import Reconstruction


def check_reconstruction(recon, kind: str | None = None) -> Reconstruction:
    if not isinstance(recon, Reconstruction):
        raise TypeError(f"expected a Reconstruction, got {type(recon).__name__}")
    if kind is not None and recon.kind != kind:
        raise ValueError(f"expected a {kind} reconstruction, got {recon.kind}")
    return recon


def check_positive(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not value > 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_non_negative_int(name: str, value) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return int(value)


def check_fraction(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return float(value)


def check_choice(name: str, value, options):
    if value not in options:
        raise ValueError(f"{name} must be one of {', '.join(map(str, options))}; got {value!r}")
    return value


def check_sequence_lengths(dets_left, dets_right, flows_ln, flows_lr) -> int:
    n = len(dets_left)
    if n == 0:
        raise ValueError("empty detection sequence")
    if len(dets_right) != n:
        raise ValueError(f"{n} left detection frames but {len(dets_right)} right")
    if len(flows_lr) != n:
        raise ValueError(f"{n} frames need {n} left-to-right flows, got {len(flows_lr)}")
    if len(flows_ln) < n - 1:
        raise ValueError(f"{n} frames need {n - 1} temporal flows, got {len(flows_ln)}")
    return n
