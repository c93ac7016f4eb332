"""Compare tape gradients against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import NonFiniteError
from .tensor import GradTape, Tensor, branch_log, precision, weighted_sum

STEP = 1e-3
# smallest step tried when a perturbation crosses a kink
MIN_STEP = 1e-6
DENOM_FLOOR = 1e-8
MAX_PARAMS = 1000


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    passed: bool
    worst: str = ""
    n_values: int = 0
    message: str = ""
    # coordinates whose +-step evaluations landed on a different branch of a
    # piecewise op (ReLU, max pool, sort); their central difference is invalid
    kinks: int = 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" worst={self.worst}" if self.worst else ""
        if self.kinks:
            extra += f" kinks={self.kinks}"
        if self.message:
            extra += f" ({self.message})"
        return f"{status} {self.name}: max_rel_error={self.max_rel_error:.3e} tol={self.tolerance:g} n={self.n_values}{extra}"


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), DENOM_FLOOR)


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(oa == ob and np.array_equal(da, db) for (oa, da), (ob, db) in zip(a, b))


def grad_check(fn: Callable[..., Tensor], inputs: Mapping[str, np.ndarray], tolerance: float = 1e-4,
               name: str = "op", step: float = STEP, seed: int = 0,
               max_params: int = MAX_PARAMS, stop_on_kink: bool = False,
               extrapolate: bool = True) -> GradCheckReport:
    """Check the gradients of ``fn(tensors)`` for every array in ``inputs``.

    ``fn`` receives a dict mapping the input names to tensors.

    Non-scalar outputs are reduced with a fixed random weighting so every
    output element contributes.  Runs in float64.

    With ``extrapolate`` (the default) the central differences at h and h/2
    are combined as (4 D(h/2) - D(h)) / 3, cancelling the h^2 truncation
    term; otherwise the plain central difference at h is used.

    If a +-h evaluation lands on another branch of a piecewise op (ReLU,
    max pool, sort pick) the difference straddles a kink, so h is shrunk
    for that coordinate until the branches agree, down to MIN_STEP.
    ``kinks`` counts the coordinates that still straddle one there; they
    keep their last estimate in the error.  With ``stop_on_kink`` the sweep
    gives up at the first such coordinate so callers can move to a new point.
    """
    total = sum(np.size(v) for v in inputs.values())
    if total > max_params:
        raise ValueError(f"{name}: {total} values exceeds the grad-check budget of {max_params}")
    with precision(np.float64):
        base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
        with branch_log() as base_branches:
            probe = fn({k: Tensor(v) for k, v in base.items()})
        if probe.data.size == 1:
            weights = None
        else:
            weights = np.random.default_rng(seed).standard_normal(probe.shape)

        def scalar(out: Tensor) -> Tensor:
            return out if weights is None else weighted_sum(out, weights)

        def evaluate() -> tuple[float, bool]:
            with branch_log() as branches:
                value = scalar(fn({k: Tensor(v) for k, v in base.items()})).item()
            return value, _same_branches(branches, base_branches)

        tensors = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
        try:
            with GradTape() as tape:
                loss = scalar(fn(tensors))
            analytic = tape.gradient(loss, list(tensors.values()))
        except NonFiniteError as exc:
            return GradCheckReport(name, float("inf"), tolerance, False, message=f"non-finite gradient in {exc.op}")

        worst_err, worst_at, kinks, shrunk = 0.0, "", 0, 0
        for (key, arr), ga in zip(base.items(), analytic):
            flat = arr.reshape(-1)
            numeric = np.empty(flat.size)
            for i in range(flat.size):
                orig = flat[i]

                def central(h):
                    flat[i] = orig + h
                    f_plus, same_plus = evaluate()
                    flat[i] = orig - h
                    f_minus, same_minus = evaluate()
                    flat[i] = orig
                    return (f_plus - f_minus) / (2 * h), same_plus and same_minus

                h = step
                while True:
                    d, same = central(h)
                    if extrapolate and same:
                        d_half, same = central(h / 2)
                        d = (4 * d_half - d) / 3
                    if same or h / 4 < MIN_STEP:
                        break
                    h /= 4
                numeric[i] = d
                shrunk += h < step
                if not same:
                    kinks += 1
                    if stop_on_kink:
                        return GradCheckReport(name, float("nan"), tolerance, False, f"{key}[{i}]", total,
                                               "coordinate sits on a kink", kinks)
            err = relative_error(ga.reshape(-1), numeric)
            if err.size and err.max() > worst_err:
                worst_err = float(err.max())
                j = int(err.argmax())
                worst_at = f"{key}[{j}] analytic={ga.reshape(-1)[j]:.6e} numeric={numeric[j]:.6e}"
    message = f"{shrunk} near-kink coordinates used a smaller step" if shrunk else ""
    return GradCheckReport(name, worst_err, tolerance, worst_err < tolerance, worst_at, total, message, kinks)
