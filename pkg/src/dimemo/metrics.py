"""Agreement metrics for continuous affect traces.

Implements the concordance correlation coefficient (CCC) on population
moments, the concatenated-batch CCC training loss with its analytic
gradient, a Fisher-transform confidence interval for CCC estimates, and
the coefficient of variation used to summarize score spread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateIntervalError,
    GradientUndefinedError,
    UndefinedVarianceError,
    ValidationError,
)

__all__ = [
    "CccStats",
    "CccReport",
    "ccc",
    "ccc_loss",
    "ccc_loss_grad",
    "ccc_ci",
    "ccc_report",
    "coefficient_of_variation",
    "write_ccc_reports",
]


@dataclass(frozen=True)
class CccStats:
    """CCC together with the population moments it was computed from."""

    ccc: float
    pearson: float
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov: float
    n: int


@dataclass(frozen=True)
class CccReport:
    """A point estimate with its confidence interval and sample size."""

    ccc: float
    ci_low: float
    ci_high: float
    n: int


def _as_series(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def ccc(x, y) -> CccStats:
    """Concordance correlation between two equal-length series.

    Uses population (1/N) moments. Degenerate cases follow fixed
    conventions: if both series are constant the CCC is 1 when the means
    agree and 0 otherwise; if exactly one series is constant the CCC is 0.
    The reported Pearson correlation is 0 in every degenerate case.
    """
    xs = _as_series(x, "x")
    ys = _as_series(y, "y")
    if xs.shape != ys.shape:
        raise ValidationError(f"length mismatch: {xs.size} vs {ys.size}")
    n = xs.size
    if n < 2:
        raise ValidationError(f"need at least 2 samples, got {n}")
    mx = float(xs.mean())
    my = float(ys.mean())
    dx = xs - mx
    dy = ys - my
    vx = float(np.mean(dx * dx))
    vy = float(np.mean(dy * dy))
    cov = float(np.mean(dx * dy))
    if vx == 0.0 and vy == 0.0:
        value = 1.0 if mx == my else 0.0
        return CccStats(value, 0.0, mx, my, vx, vy, cov, n)
    if vx == 0.0 or vy == 0.0:
        return CccStats(0.0, 0.0, mx, my, vx, vy, cov, n)
    rho = cov / math.sqrt(vx * vy)
    rho = min(1.0, max(-1.0, rho))
    value = 2.0 * cov / (vx + vy + (mx - my) ** 2)
    value = min(1.0, max(-1.0, value))
    return CccStats(value, rho, mx, my, vx, vy, cov, n)


def _concat(parts: Sequence, name: str) -> np.ndarray:
    if isinstance(parts, np.ndarray) and parts.ndim == 1:
        return _as_series(parts, name)
    arrays = [_as_series(p, name) for p in parts]
    if not arrays:
        raise ValidationError(f"{name} is empty")
    return np.concatenate(arrays)


def ccc_loss(predictions, references) -> float:
    """1 - CCC over all samples of a batch, concatenated.

    ``predictions`` and ``references`` are either single 1-d arrays or
    sequences of per-conversation arrays. Conversations are concatenated
    before the moments are taken; the loss is not a mean of per-
    conversation losses.
    """
    p = _concat(predictions, "predictions")
    r = _concat(references, "references")
    return 1.0 - ccc(p, r).ccc


def ccc_loss_grad(predictions, references) -> tuple[float, np.ndarray]:
    """Loss and its exact gradient with respect to each prediction.

    Both arguments are the already-concatenated batch series. Raises
    GradientUndefinedError when the predictions are constant across the
    batch (the CCC is not differentiable there).
    """
    p = _as_series(predictions, "predictions")
    r = _as_series(references, "references")
    if p.shape != r.shape:
        raise ValidationError(f"length mismatch: {p.size} vs {r.size}")
    n = p.size
    if n < 2:
        raise ValidationError(f"need at least 2 samples, got {n}")
    mp = float(p.mean())
    mr = float(r.mean())
    dp = p - mp
    dr = r - mr
    vp = float(np.mean(dp * dp))
    vr = float(np.mean(dr * dr))
    cov = float(np.mean(dp * dr))
    if vp == 0.0:
        raise GradientUndefinedError(
            "predictions are constant across the batch; CCC gradient undefined"
        )
    denom = vp + vr + (mp - mr) ** 2
    num = 2.0 * cov
    # d ccc / d p_i = (2 dr_i / n) / D - num * (2 dp_i + 2 (mp - mr)) / (n D^2)
    grad_ccc = (2.0 / (n * denom)) * dr - (num / (denom * denom)) * (
        2.0 * dp + 2.0 * (mp - mr)
    ) / n
    loss = 1.0 - num / denom
    return loss, -grad_ccc


def ccc_ci(
    x,
    y,
    z_mult: float = 1.64,
    shift_denominator: str = "product",
) -> CccReport:
    """Fisher-transform confidence interval for the CCC of two series.

    The CCC estimate is mapped through arctanh, a variance for the
    transformed value is assembled from the Pearson correlation ``rho``,
    the CCC ``rc``, and the scaled mean shift ``u``, and the interval is
    mapped back through tanh:

        var = [ (1-rho^2) rc^2 / ((1-rc^2) rho^2)
                + 2 rc^3 (1-rc) u^2 / (rho (1-rc^2)^2)
                - rc^4 u^4 / (2 rho^2 (1-rc^2)^2) ] / (n-2)

    ``u`` divides the mean difference by sd_x*sd_y ("product", the
    default) or by sqrt(sd_x*sd_y) ("sqrt"). ``z_mult`` scales the
    half-width (1.64 for a 90% interval).
    """
    if shift_denominator not in ("product", "sqrt"):
        raise ValidationError(
            f"shift_denominator must be 'product' or 'sqrt', got {shift_denominator!r}"
        )
    stats = ccc(x, y)
    if stats.n < 3:
        raise ValidationError(f"need at least 3 samples for an interval, got {stats.n}")
    rc = stats.ccc
    rho = stats.pearson
    if abs(rc) >= 1.0:
        raise DegenerateIntervalError(f"interval undefined at ccc = {rc}")
    if rho == 0.0:
        raise UndefinedVarianceError(
            "variance estimate undefined at zero Pearson correlation"
        )
    sd_prod = math.sqrt(stats.var_x * stats.var_y)
    if shift_denominator == "product":
        u = (stats.mean_x - stats.mean_y) / sd_prod
    else:
        u = (stats.mean_x - stats.mean_y) / math.sqrt(sd_prod)
    rc2 = rc * rc
    one_m = 1.0 - rc2
    term1 = (1.0 - rho * rho) * rc2 / (one_m * rho * rho)
    term2 = 2.0 * rc ** 3 * (1.0 - rc) * u * u / (rho * one_m * one_m)
    term3 = rc2 * rc2 * u ** 4 / (2.0 * rho * rho * one_m * one_m)
    var_z = (term1 + term2 - term3) / (stats.n - 2)
    if not var_z > 0.0:
        raise UndefinedVarianceError(
            f"variance estimate not positive ({var_z}); interval undefined"
        )
    z = math.atanh(rc)
    half = z_mult * math.sqrt(var_z)
    return CccReport(rc, math.tanh(z - half), math.tanh(z + half), stats.n)


def ccc_report(x, y, z_mult: float = 1.64) -> CccReport:
    """Like ``ccc_ci`` but usable on arbitrary series: when the interval
    is undefined (|ccc| = 1, zero correlation, or a variance estimate
    outside the approximation's regime) the bounds are NaN instead of an
    error, so evaluation of weak or perfect models still yields a report.
    """
    try:
        return ccc_ci(x, y, z_mult=z_mult)
    except (DegenerateIntervalError, UndefinedVarianceError):
        stats = ccc(x, y)
        return CccReport(stats.ccc, float("nan"), float("nan"), stats.n)


def coefficient_of_variation(values) -> float:
    """Population standard deviation over the mean of a score list."""
    arr = _as_series(values, "values")
    if arr.size < 2:
        raise ValidationError(f"need at least 2 values, got {arr.size}")
    mean = float(arr.mean())
    if mean == 0.0:
        raise ValidationError("coefficient of variation undefined at zero mean")
    return float(arr.std()) / mean


def write_ccc_reports(path, entries: Iterable[tuple[str, CccReport]]) -> None:
    """Write named reports as CSV rows ``name,ccc,ci_low,ci_high,n``.

    Scores are rendered to 4 decimals, the presentation used throughout
    the result tables.
    """
    lines = ["name,ccc,ci_low,ci_high,n"]
    for name, report in entries:
        lines.append(
            f"{name},{report.ccc:.4f},{report.ci_low:.4f},{report.ci_high:.4f},{report.n}"
        )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
