"""Synthetic three-jet selection-efficiency oracles with analytic gradients.

Events carry three jets (descending transverse momentum).  Selection keeps
events with pt1/scale1 above one threshold and pt2/scale23 below another;
the efficiency is the fraction of selected events whose missing transverse
energy falls below a third threshold.  A sigmoid-smoothed variant of the
same selection is infinitely differentiable in the jet-energy-scale
parameters, which supplies the gradient observations for derivative GPs.
Scales are the nuisance parameters: 2 in the plain scenario (leading jet,
two softer jets), 4 when each group splits by pseudorapidity region.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import EmptySelectionError

__all__ = [
    "GeneratorParams",
    "CutSpec",
    "Event",
    "EventSet",
    "DEFAULT_CUTS",
    "generate_events",
    "met",
    "effective_scales",
    "sigmoid",
    "efficiency_hard",
    "efficiency_smooth",
    "efficiency_grad",
    "normalized_efficiency",
    "toy1d",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class GeneratorParams:
    """Knobs of the synthetic event population.

    The leading-jet pt follows a truncated falling exponential so the
    population straddles the 200 GeV selection threshold; the two softer
    jets approximately balance the leading jet (imbalance controlled by
    ``balance_std`` and ``angle_std``) so the missing energy spreads across
    the 50 GeV cut; pseudorapidities are centered normals wide enough to
    populate both calorimeter regions.
    """

    pt_min: float = 50.0
    pt_scale: float = 150.0
    pt_max: float = 600.0
    balance_mean: float = 1.0
    balance_std: float = 0.1
    balance_min: float = 0.7
    balance_max: float = 1.3
    split_min: float = 0.55
    split_max: float = 0.75
    angle_std: float = 0.25
    eta_std: float = 1.2


DEFAULT_GENERATOR = GeneratorParams()


@dataclass(frozen=True)
class CutSpec:
    """Selection thresholds and sigmoid shape parameters.

    ``steepness`` (1/GeV) smooths the two pt cuts and the missing-energy
    cut; ``eta_steepness`` (dimensionless) smooths the pseudorapidity
    boundary at ``eta_boundary`` used by the 4-parameter scenario.
    """

    pt1_threshold: float = 200.0
    pt2_threshold: float = 200.0
    met_threshold: float = 50.0
    steepness: float = 0.1
    eta_steepness: float = 0.1
    eta_boundary: float = 1.0

    def __post_init__(self):
        if min(self.pt1_threshold, self.pt2_threshold, self.met_threshold) <= 0.0:
            raise ValueError("thresholds must be > 0")
        if self.steepness <= 0.0 or self.eta_steepness <= 0.0:
            raise ValueError("sigmoid steepness must be > 0")


DEFAULT_CUTS = CutSpec()


@dataclass(frozen=True)
class Event:
    """One three-jet event; arrays have length 3, hardest jet first."""

    pt: np.ndarray
    eta: np.ndarray
    phi: np.ndarray


class EventSet:
    """Columnar store of three-jet events: pt, eta, phi each (n, 3)."""

    def __init__(self, pt, eta, phi):
        pt = np.atleast_2d(np.asarray(pt, dtype=float))
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        if pt.shape != eta.shape or pt.shape != phi.shape or pt.shape[1] != 3:
            raise ValueError("pt, eta, phi must share shape (n, 3)")
        if not np.all(pt[:, 2] > 0.0):
            raise ValueError("jet pt must be > 0")
        if np.any(pt[:, 0] < pt[:, 1]) or np.any(pt[:, 1] < pt[:, 2]):
            raise ValueError("jets must be ordered by descending pt")
        if np.any(phi < 0.0) or np.any(phi >= TWO_PI):
            raise ValueError("phi must lie in [0, 2*pi)")
        self.pt = pt
        self.eta = eta
        self.phi = phi
        self.ptx = pt * np.cos(phi)
        self.pty = pt * np.sin(phi)

    @property
    def n_events(self) -> int:
        return self.pt.shape[0]

    def event(self, i: int) -> Event:
        return Event(self.pt[i].copy(), self.eta[i].copy(), self.phi[i].copy())

    def to_csv(self, path) -> None:
        """Columnar text dump: event_id, jet_index, pt_gev, eta, phi."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["event_id", "jet_index", "pt_gev", "eta", "phi"])
            for i in range(self.n_events):
                for j in range(3):
                    writer.writerow(
                        [i, j, repr(self.pt[i, j]), repr(self.eta[i, j]),
                         repr(self.phi[i, j])]
                    )

    @classmethod
    def from_csv(cls, path) -> "EventSet":
        rows: dict[int, dict[int, tuple[float, float, float]]] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                jets = rows.setdefault(int(row["event_id"]), {})
                jets[int(row["jet_index"])] = (
                    float(row["pt_gev"]), float(row["eta"]), float(row["phi"])
                )
        n = len(rows)
        pt = np.empty((n, 3))
        eta = np.empty((n, 3))
        phi = np.empty((n, 3))
        for i in range(n):
            for j in range(3):
                pt[i, j], eta[i, j], phi[i, j] = rows[i][j]
        return cls(pt, eta, phi)


def generate_events(
    n: int, seed: int, params: GeneratorParams = DEFAULT_GENERATOR
) -> EventSet:
    """Seeded synthetic population; identical seeds give identical events."""
    if n < 1:
        raise ValueError("event count must be >= 1")
    p = params
    rng = np.random.default_rng(seed)
    span = 1.0 - np.exp(-(p.pt_max - p.pt_min) / p.pt_scale)
    pt1 = p.pt_min - p.pt_scale * np.log1p(-rng.random(n) * span)
    balance = np.clip(
        rng.normal(p.balance_mean, p.balance_std, n), p.balance_min, p.balance_max
    )
    split = rng.uniform(p.split_min, p.split_max, n)
    recoil = balance * pt1
    pt2 = split * recoil
    pt3 = (1.0 - split) * recoil
    phi1 = rng.uniform(0.0, TWO_PI, n)
    phi2 = np.mod(phi1 + np.pi + rng.normal(0.0, p.angle_std, n), TWO_PI)
    phi3 = np.mod(phi1 + np.pi + rng.normal(0.0, p.angle_std, n), TWO_PI)
    eta = rng.normal(0.0, p.eta_std, (n, 3))
    return EventSet(
        np.column_stack([pt1, pt2, pt3]),
        eta,
        np.column_stack([phi1, phi2, phi3]),
    )


def sigmoid(x, a: float, c: float):
    """S(x, a, c) = 1 / (1 + exp(-a (x - c))), overflow-safe for any a(x-c)."""
    return expit(a * (np.asarray(x, dtype=float) - c))


def _check_nu(nu) -> np.ndarray:
    nu = np.asarray(nu, dtype=float).reshape(-1)
    if nu.size not in (2, 4):
        raise ValueError(f"nuisance point must have 2 or 4 components, got {nu.size}")
    if not np.all(nu > 0.0):
        raise ValueError("nuisance components must be strictly positive")
    return nu


def _as_event_set(events) -> EventSet:
    if isinstance(events, EventSet):
        return events
    if isinstance(events, Event):
        return EventSet(events.pt, events.eta, events.phi)
    raise TypeError("expected an Event or EventSet")


def _eta_groups(es: EventSet) -> tuple[np.ndarray, np.ndarray]:
    """|eta| of the leading jet and |pt-weighted mean eta| of the soft pair."""
    abs_eta1 = np.abs(es.eta[:, 0])
    soft_pt = es.pt[:, 1:]
    mean_eta = np.sum(soft_pt * es.eta[:, 1:], axis=1) / np.sum(soft_pt, axis=1)
    return abs_eta1, np.abs(mean_eta)


def effective_scales(
    events, nu, mode: str = "hard", cuts: CutSpec = DEFAULT_CUTS
) -> tuple[np.ndarray, np.ndarray]:
    """Per-event scales (leading jet, soft pair) for a 4-component point.

    Hard mode picks the central scale where the group's |eta| measure is
    below the boundary and the outer scale elsewhere; smooth mode blends the
    two with a sigmoid in |eta| (exact midpoint at the boundary).
    """
    nu = _check_nu(nu)
    if nu.size != 4:
        raise ValueError("effective_scales requires a 4-component nuisance point")
    if mode not in ("hard", "smooth"):
        raise ValueError("mode must be 'hard' or 'smooth'")
    es = _as_event_set(events)
    nu1c, nu1o, nu23c, nu23o = nu
    abs_eta1, abs_eta23 = _eta_groups(es)
    if mode == "hard":
        s1 = np.where(abs_eta1 < cuts.eta_boundary, nu1c, nu1o)
        s23 = np.where(abs_eta23 < cuts.eta_boundary, nu23c, nu23o)
    else:
        g1 = sigmoid(abs_eta1, cuts.eta_steepness, cuts.eta_boundary)
        g23 = sigmoid(abs_eta23, cuts.eta_steepness, cuts.eta_boundary)
        s1 = (1.0 - g1) * nu1c + g1 * nu1o
        s23 = (1.0 - g23) * nu23c + g23 * nu23o
    if isinstance(events, Event):
        return float(s1[0]), float(s23[0])
    return s1, s23


def _resolve_scales(es: EventSet, nu: np.ndarray, mode: str, cuts: CutSpec):
    """Scales of the leading jet and the soft pair; scalars in the 2D case."""
    if nu.size == 2:
        return nu[0], nu[1]
    return effective_scales(es, nu, mode, cuts)


def _met_components(es: EventSet, s1, s23):
    mx = es.ptx[:, 0] / s1 + (es.ptx[:, 1] + es.ptx[:, 2]) / s23
    my = es.pty[:, 0] / s1 + (es.pty[:, 1] + es.pty[:, 2]) / s23
    return mx, my


def met(event, nu, mode: str = "hard", cuts: CutSpec = DEFAULT_CUTS):
    """Missing transverse energy: magnitude of the scaled jet-pt vector sum."""
    nu = _check_nu(nu)
    es = _as_event_set(event)
    s1, s23 = _resolve_scales(es, nu, mode, cuts)
    mx, my = _met_components(es, s1, s23)
    values = np.hypot(mx, my)
    if isinstance(event, Event):
        return float(values[0])
    return values


def _pass_mask(es: EventSet, s1, s23, cuts: CutSpec) -> np.ndarray:
    return (es.pt[:, 0] / s1 > cuts.pt1_threshold) & (
        es.pt[:, 1] / s23 < cuts.pt2_threshold
    )


def efficiency_hard(events, nu, cuts: CutSpec = DEFAULT_CUTS) -> float:
    """Fraction of cut-passing events whose missing energy is under threshold."""
    nu = _check_nu(nu)
    es = _as_event_set(events)
    s1, s23 = _resolve_scales(es, nu, "hard", cuts)
    selected = _pass_mask(es, s1, s23, cuts)
    n_pass = int(np.count_nonzero(selected))
    if n_pass == 0:
        raise EmptySelectionError(
            f"no event passes the pt selection at nu={nu.tolist()}"
        )
    mx, my = _met_components(es, s1, s23)
    met_values = np.hypot(mx, my)
    n_low = int(np.count_nonzero(selected & (met_values < cuts.met_threshold)))
    return n_low / n_pass


def _pass_weights(es: EventSet, s1, s23, cuts: CutSpec):
    a = cuts.steepness
    s_hi = sigmoid(es.pt[:, 0] / s1, a, cuts.pt1_threshold)
    s_lo = sigmoid(es.pt[:, 1] / s23, -a, cuts.pt2_threshold)
    return s_hi, s_lo


def efficiency_smooth(events, nu, cuts: CutSpec = DEFAULT_CUTS) -> float:
    """Sigmoid-smoothed efficiency; infinitely differentiable in the scales."""
    nu = _check_nu(nu)
    es = _as_event_set(events)
    s1, s23 = _resolve_scales(es, nu, "smooth", cuts)
    s_hi, s_lo = _pass_weights(es, s1, s23, cuts)
    w_pass = s_hi * s_lo
    denom = float(np.sum(w_pass))
    if denom <= np.finfo(float).tiny * es.n_events:
        raise EmptySelectionError(
            f"selection weight sum underflowed at nu={nu.tolist()}"
        )
    mx, my = _met_components(es, s1, s23)
    w_met = sigmoid(np.hypot(mx, my), -cuts.steepness, cuts.met_threshold)
    return float(np.sum(w_pass * w_met)) / denom


def _scale_jacobians(es: EventSet, nu: np.ndarray, cuts: CutSpec):
    """d(scale)/d(nu_p) for the leading jet and the soft pair, per parameter."""
    if nu.size == 2:
        one = 1.0
        zero = 0.0
        return [(one, zero), (zero, one)]
    g1 = sigmoid(np.abs(es.eta[:, 0]), cuts.eta_steepness, cuts.eta_boundary)
    _, abs_eta23 = _eta_groups(es)
    g23 = sigmoid(abs_eta23, cuts.eta_steepness, cuts.eta_boundary)
    zero = 0.0
    return [
        (1.0 - g1, zero),
        (g1, zero),
        (zero, 1.0 - g23),
        (zero, g23),
    ]


def efficiency_grad(events, nu, cuts: CutSpec = DEFAULT_CUTS) -> np.ndarray:
    """Exact gradient of ``efficiency_smooth`` with respect to each nuisance
    component (quotient rule over the weight sums, chain rule through the
    sigmoids, the missing-energy magnitude, and the smooth scale mixture)."""
    nu = _check_nu(nu)
    es = _as_event_set(events)
    s1, s23 = _resolve_scales(es, nu, "smooth", cuts)
    a = cuts.steepness
    pt1, pt2 = es.pt[:, 0], es.pt[:, 1]

    s_hi, s_lo = _pass_weights(es, s1, s23, cuts)
    w_pass = s_hi * s_lo
    denom = float(np.sum(w_pass))
    if denom <= np.finfo(float).tiny * es.n_events:
        raise EmptySelectionError(
            f"selection weight sum underflowed at nu={nu.tolist()}"
        )
    mx, my = _met_components(es, s1, s23)
    m = np.hypot(mx, my)
    w_met = sigmoid(m, -a, cuts.met_threshold)
    eff = float(np.sum(w_pass * w_met)) / denom

    dhi = a * s_hi * (1.0 - s_hi) * (-pt1 / s1**2)
    dlo = -a * s_lo * (1.0 - s_lo) * (-pt2 / s23**2)
    dwp_ds1 = dhi * s_lo
    dwp_ds23 = s_hi * dlo

    # d|M|/ds via the components; the origin is a measure-zero kink, where
    # the contribution is taken as zero.
    safe_m = np.where(m > 0.0, m, 1.0)
    px1, py1 = es.ptx[:, 0], es.pty[:, 0]
    px23 = es.ptx[:, 1] + es.ptx[:, 2]
    py23 = es.pty[:, 1] + es.pty[:, 2]
    dm_ds1 = np.where(m > 0.0, -(mx * px1 + my * py1) / (s1**2 * safe_m), 0.0)
    dm_ds23 = np.where(m > 0.0, -(mx * px23 + my * py23) / (s23**2 * safe_m), 0.0)
    dwm = -a * w_met * (1.0 - w_met)
    dnum_ds1 = dwp_ds1 * w_met + w_pass * dwm * dm_ds1
    dnum_ds23 = dwp_ds23 * w_met + w_pass * dwm * dm_ds23

    grad = np.empty(nu.size)
    for p, (j1, j23) in enumerate(_scale_jacobians(es, nu, cuts)):
        d_num = float(np.sum(dnum_ds1 * j1) + np.sum(dnum_ds23 * j23))
        d_den = float(np.sum(dwp_ds1 * j1) + np.sum(dwp_ds23 * j23))
        grad[p] = (d_num - eff * d_den) / denom
    return grad


def normalized_efficiency(
    events,
    nu,
    cuts: CutSpec = DEFAULT_CUTS,
    with_grad: bool = False,
    central: float | None = None,
):
    """Hard efficiency normalized by its value at the all-ones point.

    The gradient (when requested) comes from the smooth surrogate, divided
    by the same hard central value; the mismatch between the hard target and
    the smooth gradient is what the gradient noise term absorbs.
    """
    nu = _check_nu(nu)
    if central is None:
        central = efficiency_hard(events, np.ones(nu.size), cuts)
    if central <= 0.0:
        raise EmptySelectionError("central efficiency is zero; cannot normalize")
    value = efficiency_hard(events, nu, cuts) / central
    if not with_grad:
        return value
    return value, efficiency_grad(events, nu, cuts) / central


def toy1d(x):
    """Scalar sinusoidal benchmark: y = x cos x with dy/dx = cos x - x sin x."""
    x = np.asarray(x, dtype=float)
    y = x * np.cos(x)
    dy = np.cos(x) - x * np.sin(x)
    if y.ndim == 0:
        return float(y), float(dy)
    return y, dy
