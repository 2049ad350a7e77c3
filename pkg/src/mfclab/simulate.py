"""Euler-Maruyama integration of the n-particle common-noise system.

One Wiener increment per (path, step) drives *all* particles in that path
(common noise, no idiosyncratic noise). The lifted atom dynamics execute the
identical per-atom update, so finite and lifted trajectories agree bit for bit
under shared increments; that discrete identity is what the cost-lift checks
in `verify` lean on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .measures import _as_atoms
from .models import ModelSpec, _lifted_batch

BLOWUP_LIMIT = 1.0e8


@dataclass(frozen=True)
class SimConfig:
    t0: float
    T: float
    steps: int
    n_paths: int
    seed: int
    scheme: str = "euler-maruyama"

    def __post_init__(self):
        if not self.T > self.t0:
            raise ValueError("need T > t0")
        if self.steps < 1 or self.n_paths < 1:
            raise ValueError("steps and n_paths must be >= 1")
        if self.scheme != "euler-maruyama":
            raise ValueError("only the Euler-Maruyama scheme is supported")

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps


class ControlPolicy:
    """Maps (step index, time, states (P,n,d)) -> controls (P,n,d)."""

    label = "policy"

    def controls(self, k: int, t: float, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ZeroControl(ControlPolicy):
    label = "zero"

    def controls(self, k, t, states):
        return np.zeros_like(states)


class OpenLoopSchedule(ControlPolicy):
    """Deterministic per-step control tuples, shape (steps, n, d)."""

    def __init__(self, schedule, label="open-loop"):
        self.schedule = np.asarray(schedule, dtype=np.float64)
        if self.schedule.ndim != 3:
            raise ValueError("schedule must have shape (steps, n, d)")
        if not np.all(np.isfinite(self.schedule)):
            raise ValueError("schedule must be finite")
        self.label = label

    def controls(self, k, t, states):
        a = self.schedule[k]
        return np.broadcast_to(a, states.shape)


class MarkovFeedback(ControlPolicy):
    """Feedback a(t, x); fn is vectorized over the path axis."""

    def __init__(self, fn, label="feedback"):
        self.fn = fn
        self.label = label

    def controls(self, k, t, states):
        a = np.asarray(self.fn(t, states), dtype=np.float64)
        if a.shape != states.shape:
            raise ValueError(f"feedback returned shape {a.shape}, want {states.shape}")
        return a


class ShiftedPolicy(ControlPolicy):
    """Base policy plus a constant offset (perturbation sweeps)."""

    def __init__(self, base: ControlPolicy, offset, label=None):
        self.base = base
        self.offset = np.asarray(offset, dtype=np.float64)
        self.label = label or f"{base.label}+shift"

    def controls(self, k, t, states):
        return self.base.controls(k, t, states) + self.offset


@dataclass
class PathBundle:
    """Monte Carlo ensemble with shared (per path) Wiener increments."""

    t0: float
    dt: float
    states: np.ndarray         # (P, steps+1, n, d)
    increments: np.ndarray     # (P, steps, d')
    control_trace: np.ndarray  # (P, steps, n, d)
    dead_step: np.ndarray = field(default=None)  # (P,), -1 = path stayed finite

    def __post_init__(self):
        if self.dead_step is None:
            self.dead_step = np.full(self.states.shape[0], -1, dtype=np.int64)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def any_dead(self) -> bool:
        return bool(np.any(self.dead_step >= 0))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)


def wiener_increments(cfg: SimConfig, d_prime: int) -> np.ndarray:
    """Common-noise increments (P, steps, d'), each ~ N(0, dt I).

    Draw (p, k, j) comes from the counter (seed; p, k, block(j)), so the array
    is bit-identical however path generation is scheduled or partitioned.
    """
    paths = np.arange(cfg.n_paths, dtype=np.uint64)[:, None]
    steps = np.arange(cfg.steps, dtype=np.uint64)[None, :]
    z = rng.normals(cfg.seed, rng.TAG_WIENER, paths, steps, d_prime)
    return np.sqrt(cfg.dt) * z


def _step_states(model, states, controls, dW, dt, coeff_eval):
    """One explicit step on all paths; coeff_eval supplies (B, Sigma) atoms."""
    B, S = coeff_eval(model, states)
    drift = (-controls + B) * dt
    noise = np.einsum("pnij,pj->pni", S, dW)
    return states + drift + noise


def _finite_coeffs(model, states):
    """Direct evaluation b(x_i, mu), sigma(x_i, mu) on every path.

    Non-strict: a path that drives a coefficient out of its domain produces
    non-finite values confined to that path, which the blow-up guard retires.
    """
    m1, m2 = model.features(states)
    m1b = m1[:, None, :]
    m2b = m2[:, None]
    return (model.drift_at(states, m1b, m2b, strict=False),
            model.sigma_at(states, m1b, m2b, strict=False))


def _lifted_coeffs(model, states):
    """Evaluation through the lift: atom representation of B(X), Sigma(X)."""
    B, S, _, _ = _lifted_batch(model, states, strict=False)
    return B, S


def _integrate(model, cfg, x0, policy, coeff_eval, increments):
    atoms = _as_atoms(x0)
    n, d = atoms.shape
    if d != model.d:
        raise ValueError(f"initial state dimension {d} != model dimension {model.d}")
    if increments is None:
        increments = wiener_increments(cfg, model.d_prime)
    P, S = cfg.n_paths, cfg.steps
    if increments.shape != (P, S, model.d_prime):
        raise ValueError(f"increments shape {increments.shape} does not match config")

    states = np.empty((P, S + 1, n, d))
    trace = np.empty((P, S, n, d))
    dead = np.full(P, -1, dtype=np.int64)
    cur = np.broadcast_to(atoms, (P, n, d)).copy()
    states[:, 0] = cur
    for k in range(S):
        t = cfg.t0 + k * cfg.dt
        a = np.asarray(policy.controls(k, t, cur), dtype=np.float64)
        if a.shape != cur.shape:
            raise ValueError(f"policy returned shape {a.shape}, want {cur.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError(f"policy produced non-finite controls at step {k}")
        trace[:, k] = a
        with np.errstate(over="ignore", invalid="ignore"):
            nxt = _step_states(model, cur, a, increments[:, k], cfg.dt, coeff_eval)
        bad = ~np.all(np.isfinite(nxt) & (np.abs(nxt) <= BLOWUP_LIMIT), axis=(1, 2))
        newly = bad & (dead < 0)
        dead[newly] = k + 1
        frozen = dead >= 0
        if np.any(frozen):
            nxt = np.where(frozen[:, None, None], cur, nxt)
        states[:, k + 1] = nxt
        cur = nxt
    return PathBundle(cfg.t0, cfg.dt, states, increments, trace, dead)


def simulate_particles(model: ModelSpec, cfg: SimConfig, x0, policy: ControlPolicy,
                       increments: np.ndarray | None = None) -> PathBundle:
    """Integrate dX_i = [-a_i + b(X_i, mu_X)] ds + sigma(X_i, mu_X) dW, shared W."""
    return _integrate(model, cfg, x0, policy, _finite_coeffs, increments)


def simulate_lifted_atoms(model: ModelSpec, cfg: SimConfig, atoms, lifted_policy: ControlPolicy,
                          increments: np.ndarray | None = None) -> PathBundle:
    """Integrate the lifted SDE restricted to E_n: dX = [-a + B(X)] ds + Sigma(X) dW.

    Controls are piecewise constant on the atom partition (one d-vector per
    atom), so the update coincides with the finite system's, atom by atom.
    """
    return _integrate(model, cfg, atoms, lifted_policy, _lifted_coeffs, increments)


def _rnorm_along(states, r):
    """|x|_r per (path, step): states (P, K, n, d) -> (P, K)."""
    norms = np.sqrt((states ** 2).sum(axis=-1))
    return (norms ** r).mean(axis=-1) ** (1.0 / r)


def _mean_se(v):
    v = np.asarray(v, dtype=np.float64)
    m = float(v.mean())
    se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
    return m, se


def path_statistics(bundle: PathBundle, r: float, baseline: PathBundle | None = None) -> dict:
    """Monte Carlo counterparts of the a-priori path estimates, with std errors."""
    sup_norm = _rnorm_along(bundle.states, r).max(axis=1)
    dev = bundle.states - bundle.states[:, :1]
    sup_dev = _rnorm_along(dev, r).max(axis=1)
    incr = bundle.increments
    out = {
        "mean_sup_rnorm": _mean_se(sup_norm),
        "mean_sup_deviation": _mean_se(sup_dev),
        "increment_mean": _mean_se(incr.reshape(-1)),
        "increment_var_over_dt": float(incr.var(ddof=1) / bundle.dt),
        "n_paths": bundle.n_paths,
        "dead_paths": int((bundle.dead_step >= 0).sum()),
    }
    if baseline is not None:
        diff = bundle.states - baseline.states
        out["mean_sup_diff"] = _mean_se(_rnorm_along(diff, r).max(axis=1))
    return out


def dump_trajectories(bundle: PathBundle, path) -> None:
    """CSV dump with columns (path, step, particle, coord, value)."""
    P, K, n, d = bundle.states.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "particle", "coord", "value"])
        for p in range(P):
            for k in range(K):
                for i in range(n):
                    for j in range(d):
                        w.writerow([p, k, i, j, repr(bundle.states[p, k, i, j])])
