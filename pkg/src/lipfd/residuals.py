"""Residual generation and evaluation.

Three residual families over a simulation run:

  ARR    -- model-consistency check on the measured signals:
            M1 ydd + M2 yd + M3 y + N1 udd + N2 ud + N3 u + Psi(y, u)
  EARR   -- the same structure driven by the output estimation error
            e_y = y_meas - yhat, either exact (with the nonlinearity
            difference Psi(y,u) - Psi(yhat,u)) or linearized through
            the Lipschitz bound (coefficient M3n on e_y)
  IEARR  -- Lemma-3 integral reformulation of the linearized EARR that
            trades derivatives for t-weighted cumulative integrals

plus the sliding-window L2 evaluation J and threshold calibration.
Derivatives use 2nd-order finite differences; integrals use the
cumulative trapezoid rule, both O(dt^2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .model import ContractViolation, ResidualStructure
from .sim import TimeGrid

ARR = "ARR"
EARR = "EARR"
EARR_LINEAR = "EARR_linear"
IEARR = "IEARR"
KINDS = (ARR, EARR, EARR_LINEAR, IEARR)


@dataclass(frozen=True)
class ResidualTrace:
    grid: TimeGrid
    values: np.ndarray          # (samples, r)
    kind: str

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != self.grid.n_samples:
            raise ContractViolation("trace length must match the grid")
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown residual kind {self.kind!r}")
        object.__setattr__(self, "values", vals)

    @property
    def r(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class EvaluationTrace:
    """Windowed norms J; sample i covers source samples [start_index+i, start_index+i+L).

    The grid timestamps each window by its last (causal) sample.
    """

    grid: TimeGrid
    J: np.ndarray               # (windows, r)
    window_len: int
    start_index: int

    @property
    def r(self) -> int:
        return self.J.shape[1]


@dataclass(frozen=True)
class ThresholdSet:
    J_th: np.ndarray
    calibration_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        th = np.asarray(self.J_th, dtype=float).reshape(-1)
        if np.any(th < 0):
            raise ContractViolation("thresholds must be >= 0")
        object.__setattr__(self, "J_th", th)


@dataclass(frozen=True)
class DetectionReport:
    alarm: bool
    first_crossing_index: tuple      # per channel, -1 when no crossing
    first_crossing_time: tuple       # per channel, nan when no crossing
    peak_ratio: tuple                # per channel, peak J / J_th

    def as_dict(self) -> dict:
        return {
            "alarm": self.alarm,
            "first_crossing_index": list(self.first_crossing_index),
            "first_crossing_time": list(self.first_crossing_time),
            "peak_ratio": list(self.peak_ratio),
        }


# ---------------------------------------------------------------------------
# differentiation / integration kernels
# ---------------------------------------------------------------------------

def differentiate(signal: np.ndarray, dt: float, order: int = 1) -> np.ndarray:
    """Numerical derivative on a uniform grid.

    2nd-order central differences in the interior, one-sided 2nd-order
    stencils at both ends; order=2 applies the first-derivative kernel
    twice.  Needs at least 5 samples.
    """
    sig = np.asarray(signal, dtype=float)
    squeeze = sig.ndim == 1
    if squeeze:
        sig = sig[:, None]
    if sig.shape[0] < 5:
        raise ContractViolation("differentiate needs at least 5 samples")
    if order not in (1, 2):
        raise ContractViolation("order must be 1 or 2")

    def d1(y):
        out = np.empty_like(y)
        out[1:-1] = (y[2:] - y[:-2]) / (2.0 * dt)
        out[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dt)
        out[-1] = (3.0 * y[-1] - 4.0 * y[-2] + y[-3]) / (2.0 * dt)
        return out

    out = d1(sig)
    if order == 2:
        out = d1(out)
    return out[:, 0] if squeeze else out


def cumtrapz0(y: np.ndarray, dt: float) -> np.ndarray:
    """Cumulative trapezoid with a leading zero row (same length as input)."""
    return cumulative_trapezoid(y, dx=dt, axis=0, initial=0.0)


# ---------------------------------------------------------------------------
# residual families
# ---------------------------------------------------------------------------

def _check_grid(grid: TimeGrid, *trajs):
    for tr in trajs:
        if np.asarray(tr).shape[0] != grid.n_samples:
            raise ContractViolation("trajectories must share the grid")


def _psi_trajectory(rs: ResidualStructure, y: np.ndarray, u: np.ndarray) -> np.ndarray:
    # registry nonlinearities accept whole trajectories; fall back to a
    # per-sample loop for evaluators that do not
    try:
        out = np.asarray(rs.Psi(y, u), dtype=float)
        if out.shape == (y.shape[0], rs.r):
            return out
    except Exception:
        pass
    out = np.empty((y.shape[0], rs.r))
    for i in range(y.shape[0]):
        out[i] = rs.Psi(y[i], u[i])
    return out


def eval_arr(rs: ResidualStructure, y_measured: np.ndarray, u: np.ndarray,
             grid: TimeGrid) -> ResidualTrace:
    """Classical ARR trace from measured outputs and inputs."""
    y = np.asarray(y_measured, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_grid(grid, y, u)
    dt = grid.dt
    yd = differentiate(y, dt, 1)
    ydd = differentiate(y, dt, 2)
    ud = differentiate(u, dt, 1)
    udd = differentiate(u, dt, 2)
    vals = (ydd @ rs.M1.T + yd @ rs.M2.T + y @ rs.M3.T
            + udd @ rs.N1.T + ud @ rs.N2.T + u @ rs.N3.T)
    return ResidualTrace(grid, vals + _psi_trajectory(rs, y, u), ARR)


def eval_earr(rs: ResidualStructure, e_y: np.ndarray, y_measured: np.ndarray,
              y_hat: np.ndarray, u: np.ndarray, grid: TimeGrid,
              linearized: bool = False) -> ResidualTrace:
    """Error-based ARR from the output estimation error.

    linearized=False keeps the exact nonlinearity difference
    Psi(y,u) - Psi(yhat,u); linearized=True replaces it through the
    Lipschitz bound, using the structure's M3n coefficient on e_y.
    """
    e = np.asarray(e_y, dtype=float)
    _check_grid(grid, e)
    dt = grid.dt
    ed = differentiate(e, dt, 1)
    edd = differentiate(e, dt, 2)
    if linearized:
        vals = edd @ rs.M1.T + ed @ rs.M2.T + e @ rs.M3n.T
        return ResidualTrace(grid, vals, EARR_LINEAR)
    y = np.asarray(y_measured, dtype=float)
    yh = np.asarray(y_hat, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_grid(grid, y, yh, u)
    vals = edd @ rs.M1.T + ed @ rs.M2.T + e @ rs.M3.T
    dpsi = _psi_trajectory(rs, y, u) - _psi_trajectory(rs, yh, u)
    return ResidualTrace(grid, vals + dpsi, EARR)


def eval_iearr(rs: ResidualStructure, e_y: np.ndarray, grid: TimeGrid) -> ResidualTrace:
    """Integral-form EARR: derivative-free reformulation of the linearized residual.

    IEARR = iint (2 M1 e - 2 M2 t e + M3n t^2 e) dt dt
            + int (-4 M1 t e + M2 t^2 e) dt + M1 t^2 e

    with t measured from the grid start and cumulative trapezoidal
    integrals.
    """
    e = np.asarray(e_y, dtype=float)
    _check_grid(grid, e)
    dt = grid.dt
    t = (grid.times() - grid.t0)[:, None]
    eM1 = e @ rs.M1.T
    eM2 = e @ rs.M2.T
    eM3n = e @ rs.M3n.T
    inner2 = 2.0 * eM1 - 2.0 * t * eM2 + t ** 2 * eM3n
    inner1 = -4.0 * t * eM1 + t ** 2 * eM2
    vals = cumtrapz0(cumtrapz0(inner2, dt), dt) + cumtrapz0(inner1, dt) + t ** 2 * eM1
    return ResidualTrace(grid, vals, IEARR)


def iearr_oracle(rs: ResidualStructure, earr: ResidualTrace) -> ResidualTrace:
    """Independent check of eval_iearr: double integral of t^2 * EARR_linear.

    The transform-domain identity behind the integral residual says the
    two must agree; this routine is used only for verification and never
    feeds detection.
    """
    if earr.kind != EARR_LINEAR:
        raise ContractViolation("oracle requires an EARR_linear trace")
    if earr.r != rs.r:
        raise ContractViolation("trace channel count does not match the structure")
    dt = earr.grid.dt
    t = (earr.grid.times() - earr.grid.t0)[:, None]
    vals = cumtrapz0(cumtrapz0(t ** 2 * earr.values, dt), dt)
    return ResidualTrace(earr.grid, vals, IEARR)


# ---------------------------------------------------------------------------
# evaluation and detection
# ---------------------------------------------------------------------------

def eval_window_norm(trace: ResidualTrace, t0_index: int, window_len: int) -> EvaluationTrace:
    """Sliding-window L2 norm per channel: J[i] = sqrt(sum_{k=i}^{i+L-1} r_k^2 dt)."""
    if window_len < 1:
        raise ContractViolation("window_len must be >= 1")
    S = trace.values.shape[0]
    if t0_index < 0 or t0_index + window_len > S:
        raise ContractViolation("window exceeds the trace")
    sq = trace.values ** 2
    csum = np.vstack([np.zeros((1, trace.r)), np.cumsum(sq, axis=0)])
    lo = np.arange(t0_index, S - window_len + 1)
    J = np.sqrt(np.maximum(csum[lo + window_len] - csum[lo], 0.0) * trace.grid.dt)
    # each window stamped at its last sample (causal decision time);
    # a single-window result keeps a 2-sample grid of which only the first is used
    g = trace.grid
    grid = TimeGrid(g.t0 + (t0_index + window_len - 1) * g.dt, g.dt, max(J.shape[0] - 1, 1))
    return EvaluationTrace(grid=grid, J=J, window_len=window_len, start_index=t0_index)


def calibrate_threshold(fault_free_evals: Sequence[EvaluationTrace],
                        safety_factor: float = 1.0,
                        meta: Optional[dict] = None) -> ThresholdSet:
    """Per-channel worst case of J over the fault-free calibration traces.

    The source prints a min over fault-free runs but describes the worst
    case; a min of a windowed norm is near zero and useless, so max it is.
    """
    evals = list(fault_free_evals)
    if not evals:
        raise ContractViolation("calibration needs at least one trace")
    if safety_factor < 1.0:
        raise ContractViolation("safety_factor must be >= 1")
    peak = np.max(np.stack([np.max(ev.J, axis=0) for ev in evals]), axis=0)
    info = {"safety_factor": safety_factor, "n_traces": len(evals),
            "window_len": evals[0].window_len, "start_index": evals[0].start_index}
    info.update(meta or {})
    return ThresholdSet(J_th=safety_factor * peak, calibration_meta=info)


def detect(evaluation: EvaluationTrace, thresholds: ThresholdSet) -> DetectionReport:
    """First threshold crossing per channel plus peak J/J_th ratios."""
    J = evaluation.J
    th = thresholds.J_th
    if J.shape[1] != th.shape[0]:
        raise ContractViolation("channel counts of evaluation and thresholds differ")
    times = evaluation.grid.times()
    idxs, tcross, ratios = [], [], []
    for c in range(J.shape[1]):
        above = J[:, c] > th[c]
        i = int(np.argmax(above)) if above.any() else -1
        idxs.append(i)
        tcross.append(float(times[i]) if i >= 0 else float("nan"))
        peak = float(np.max(J[:, c]))
        if th[c] > 0:
            ratios.append(peak / th[c])
        else:
            ratios.append(float("inf") if peak > 0 else 0.0)
    return DetectionReport(alarm=any(i >= 0 for i in idxs),
                           first_crossing_index=tuple(idxs),
                           first_crossing_time=tuple(tcross),
                           peak_ratio=tuple(ratios))


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def residual_to_csv(trace: ResidualTrace, path) -> None:
    header = ",".join(["t"] + [f"r{i+1}" for i in range(trace.r)])
    table = np.column_stack([trace.grid.times(), trace.values])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=header, comments="")


def evaluation_to_csv(evaluation: EvaluationTrace, thresholds: Optional[ThresholdSet],
                      path) -> None:
    r = evaluation.r
    times = evaluation.grid.times()[:evaluation.J.shape[0]]
    cols = [times, evaluation.J]
    header = ["t"] + [f"J{i+1}" for i in range(r)]
    if thresholds is not None:
        cols.append(np.tile(thresholds.J_th, (evaluation.J.shape[0], 1)))
        header += [f"Jth{i+1}" for i in range(r)]
        alarm = (evaluation.J > thresholds.J_th).any(axis=1).astype(float)
        cols.append(alarm[:, None])
        header += ["alarm"]
    table = np.column_stack(cols)
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(header), comments="")


def threshold_to_dict(th: ThresholdSet) -> dict:
    return {"format": "lipfd-thresholds", "version": 1,
            "J_th": [float(v) for v in th.J_th],
            "calibration_meta": dict(th.calibration_meta)}


def threshold_from_dict(data: dict) -> ThresholdSet:
    if data.get("format") != "lipfd-thresholds":
        raise ContractViolation("not a lipfd-thresholds document")
    return ThresholdSet(J_th=np.array(data["J_th"], dtype=float),
                        calibration_meta=dict(data.get("calibration_meta", {})))
