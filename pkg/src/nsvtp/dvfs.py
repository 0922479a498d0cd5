"""Closed-form DVFS power and per-cycle energy model.

An application alternates a compute sub-interval ``t_comp`` with a data
exchange sub-interval ``t_comp / rho``. Without tweaks the core runs at
``f_max`` for the whole cycle. With tweaks it drops to ``f_min`` for the data
exchange, paying two frequency transitions of ``delta`` seconds at full power.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import FrequencyOutOfRange, InfeasibleTweakWindow, LoadOutOfRange

UTILIZATION_CAP = Fraction(4, 5)
CUBIC_EXPONENT = 3


@dataclass(frozen=True)
class DvfsModelParams:
    P0: float = 142.2  # W
    P3: float = 107.8  # W
    f_min: float = 1.0  # GHz
    f_max: float = 3.0  # GHz
    n_dvfs: float = 3.0
    l_max: float = 3.0  # MIPS

    def __post_init__(self):
        if not (self.P0 >= 0 and self.P3 >= 0 and self.P0 + self.P3 > 0):
            raise ValueError("P0 and P3 must be non-negative with a positive sum")
        if not 0 < self.f_min <= self.f_max:
            raise ValueError("need 0 < f_min <= f_max")
        if not self.n_dvfs > 0:
            raise ValueError("n_dvfs must be positive")
        if not self.l_max > 0:
            raise ValueError("l_max must be positive")
        for name in ("P0", "P3", "f_min", "f_max", "n_dvfs", "l_max"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def full_power(self) -> float:
        return self.P0 + self.P3


DEFAULT_PARAMS = DvfsModelParams()


@dataclass(frozen=True)
class CyclePattern:
    t_comp: float  # s
    rho: float
    delta: float = 0.0  # s

    def __post_init__(self):
        if not self.t_comp > 0:
            raise ValueError("t_comp must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be non-negative")

    @property
    def t_commute(self) -> float:
        return self.t_comp / self.rho

    @property
    def period(self) -> float:
        return self.t_comp * (1 + 1 / self.rho)

    @property
    def low_window(self) -> float:
        """Time spent fully settled at ``f_min`` in each cycle."""
        return self.t_comp / self.rho - 2 * self.delta

    @property
    def feasible(self) -> bool:
        return self.low_window >= 0


def core_power(p: DvfsModelParams, f: float, l: float) -> float:
    """(P0 + P3 (f/f_max)^n) * (l/l_max)."""
    if not p.f_min <= f <= p.f_max:
        raise FrequencyOutOfRange(f"f={f} GHz outside [{p.f_min}, {p.f_max}]")
    if not 0 <= l <= p.l_max:
        raise LoadOutOfRange(f"l={l} MIPS outside [0, {p.l_max}]")
    return (p.P0 + p.P3 * (f / p.f_max) ** p.n_dvfs) * (l / p.l_max)


def _exponent(p: DvfsModelParams, generalized: bool) -> float:
    return p.n_dvfs if generalized else CUBIC_EXPONENT


def low_power(p: DvfsModelParams, generalized: bool = False) -> float:
    return p.P0 + p.P3 * (p.f_min / p.f_max) ** _exponent(p, generalized)


def low_power_ratio(p: DvfsModelParams, generalized: bool = False) -> float:
    """r: power at f_min relative to power at f_max."""
    return low_power(p, generalized) / p.full_power


def baseline_cycle_energy(p: DvfsModelParams, c: CyclePattern) -> float:
    return p.full_power * c.t_comp * (1 + 1 / c.rho)


def _require_window(c: CyclePattern):
    if not c.feasible:
        raise InfeasibleTweakWindow(
            f"data-exchange window {c.t_commute:g} s is shorter than two "
            f"transitions of {c.delta:g} s"
        )


def nsvtp_cycle_energy(p: DvfsModelParams, c: CyclePattern, generalized: bool = False) -> float:
    _require_window(c)
    return (
        p.full_power * (c.t_comp + 2 * c.delta)
        + low_power(p, generalized) * (c.t_comp / c.rho - 2 * c.delta)
    )


def eta(p: DvfsModelParams, c: CyclePattern, generalized: bool = False) -> float:
    """Energy ratio of a tweaked cycle to a full-frequency cycle (lower is better).

    Evaluated term by term in closed form rather than as the
    quotient of the two energies, so the two stay independent checks.
    """
    _require_window(c)
    r = low_power_ratio(p, generalized)
    scale = 1 + 1 / c.rho
    d = c.delta / c.t_comp
    return (1 + 2 * d) / scale + r * (1 / c.rho - 2 * d) / scale


@dataclass(frozen=True)
class AllocationResult:
    cores: int
    utilization: float


def allocate_cores(workload: float, core_capacity: float) -> AllocationResult:
    """Fewest cores keeping utilization at or below 80%.

    Rational arithmetic keeps e.g. 2.4 MIPS on 1 MIPS cores at exactly 3.
    """
    if not workload > 0 or not core_capacity > 0:
        raise ValueError("workload and core capacity must be positive")
    need = Fraction(workload) / (UTILIZATION_CAP * Fraction(core_capacity))
    cores = max(1, math.ceil(need))
    return AllocationResult(cores, float(Fraction(workload) / (cores * Fraction(core_capacity))))


@dataclass
class EtaGrid:
    """eta over rho (rows) x t_comp/delta (columns); NaN marks infeasible cells."""

    rho: np.ndarray
    ratio: np.ndarray
    eta: np.ndarray
    feasible: np.ndarray

    @property
    def any_feasible(self) -> bool:
        return bool(self.feasible.any())

    def _pick(self, fn):
        if not self.any_feasible:
            raise InfeasibleTweakWindow("no feasible cell in the sweep")
        masked = np.where(self.feasible, self.eta, np.nan)
        i, j = np.unravel_index(fn(masked), masked.shape)
        return float(masked[i, j]), float(self.rho[i]), float(self.ratio[j])

    def min(self):
        """(eta, rho, ratio) of the smallest feasible cell."""
        return self._pick(np.nanargmin)

    def max(self):
        return self._pick(np.nanargmax)

    def rows(self):
        for i, rho in enumerate(self.rho):
            for j, ratio in enumerate(self.ratio):
                yield float(rho), float(ratio), float(self.eta[i, j]), bool(self.feasible[i, j])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "tcomp_over_delta", "eta", "feasible"])
        for rho, ratio, value, ok in self.rows():
            w.writerow([f"{rho:.12g}", f"{ratio:.12g}", f"{value:.12g}", "true" if ok else "false"])
        return buf.getvalue()


def sweep_eta(
    p: DvfsModelParams,
    rho_grid: Sequence[float],
    ratio_grid: Sequence[float],
    generalized: bool = False,
) -> EtaGrid:
    """eta on a (rho, t_comp/delta) grid with t_comp fixed at 1 s.

    eta depends on delta only through delta/t_comp, so the choice of t_comp is
    immaterial. Infeasible cells are flagged, not fatal.
    """
    rho = np.asarray(rho_grid, dtype=float)
    ratio = np.asarray(ratio_grid, dtype=float)
    if rho.size == 0 or ratio.size == 0:
        raise ValueError("sweep grids must be non-empty")
    values = np.full((rho.size, ratio.size), np.nan)
    ok = np.zeros((rho.size, ratio.size), dtype=bool)
    for i, r in enumerate(rho):
        for j, q in enumerate(ratio):
            c = CyclePattern(t_comp=1.0, rho=float(r), delta=1.0 / float(q))
            if c.feasible:
                values[i, j] = eta(p, c, generalized)
                ok[i, j] = True
    return EtaGrid(rho, ratio, values, ok)


def log_grid(lo: float, hi: float, steps: int) -> np.ndarray:
    if steps < 1 or not 0 < lo <= hi:
        raise ValueError("log grid needs 0 < lo <= hi and steps >= 1")
    if steps == 1:
        return np.array([float(lo)])
    return np.geomspace(lo, hi, steps)
