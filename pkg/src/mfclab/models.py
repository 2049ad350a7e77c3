"""Coefficient bundles (b, sigma, l1, l2, U_T), Hamiltonian, feedback map, lifts.

The control cost is fixed to the quadratic family l2(a) = kappa |a|^2 / 2, so
the convex conjugate and the gradient inverse have closed forms and the growth
bounds hold with explicit constants (C2 = C3 = kappa/2, C1 = 0, nu = kappa/2).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import expressions as ex
from .measures import _as_atoms, wasserstein_r


@dataclass(frozen=True)
class ModelSpec:
    name: str
    d: int
    d_prime: int
    drift: tuple  # d expression trees
    sigma: tuple  # d rows of d_prime expression trees
    l1: ex.Expr
    kappa: float
    terminal: ex.Expr  # measure features only
    is_affine_lift: bool = False
    lift_convex: bool = False

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if len(self.drift) != self.d:
            raise ValueError(f"drift needs {self.d} component expressions")
        if len(self.sigma) != self.d or any(len(row) != self.d_prime for row in self.sigma):
            raise ValueError(f"sigma needs shape {self.d} x {self.d_prime}")
        if "x" in ex.free_variables(self.terminal):
            raise ValueError("terminal cost may only use measure features m1, m2")

    # -- feature extraction ------------------------------------------------

    def features(self, atoms):
        """(m1, m2) of the empirical measure; atoms shape (..., n, d)."""
        a = np.asarray(atoms, dtype=np.float64)
        m1 = a.mean(axis=-2)
        m2 = (a ** 2).sum(axis=-1).mean(axis=-1)
        return m1, m2

    # -- vectorized coefficient evaluation ---------------------------------

    def drift_at(self, x, m1, m2, strict=True):
        """b(x, mu): x shape (..., d) -> (..., d)."""
        cols = [np.broadcast_to(ex.evaluate(e, x, m1, m2, strict=strict),
                                np.asarray(x).shape[:-1])
                for e in self.drift]
        return np.stack(cols, axis=-1)

    def sigma_at(self, x, m1, m2, strict=True):
        """sigma(x, mu): x shape (..., d) -> (..., d, d')."""
        base = np.asarray(x).shape[:-1]
        rows = []
        for row in self.sigma:
            rows.append([np.broadcast_to(ex.evaluate(e, x, m1, m2, strict=strict), base)
                         for e in row])
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)

    def l1_at(self, x, m1, m2, strict=True):
        return np.broadcast_to(ex.evaluate(self.l1, x, m1, m2, strict=strict),
                               np.asarray(x).shape[:-1])

    def terminal_at(self, m1, m2, strict=True):
        return ex.evaluate(self.terminal, None, m1, m2, strict=strict)

    def l2(self, a):
        """Running control cost kappa |a|^2 / 2; a shape (..., d)."""
        return 0.5 * self.kappa * (np.asarray(a) ** 2).sum(axis=-1)

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "d_prime": self.d_prime,
            "b": [ex.print_coefficient(e) for e in self.drift],
            "sigma": [[ex.print_coefficient(e) for e in row] for row in self.sigma],
            "l1": ex.print_coefficient(self.l1),
            "kappa": self.kappa,
            "UT": ex.print_coefficient(self.terminal),
            "is_affine_lift": self.is_affine_lift,
            "lift_convex": self.lift_convex,
        }


def l2_conjugate(p, kappa: float):
    """Convex conjugate of the quadratic control cost: l2*(p) = |p|^2 / (2 kappa)."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return (np.asarray(p, dtype=np.float64) ** 2).sum(axis=-1) / (2.0 * kappa)


def feedback_map(p, kappa: float):
    """(Dl2)^{-1}(p) = p / kappa: costate -> pointwise-optimal control."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return np.asarray(p, dtype=np.float64) / kappa


def hamiltonian(x, mu, p, model: ModelSpec) -> float:
    """H(x, mu, p) = -b(x,mu).p - l1(x,mu) + l2*(p)."""
    atoms = _as_atoms(mu)
    m1, m2 = model.features(atoms)
    xv = np.asarray(x, dtype=np.float64).reshape(model.d)
    pv = np.asarray(p, dtype=np.float64).reshape(model.d)
    b = model.drift_at(xv, m1, m2)
    l1 = model.l1_at(xv, m1, m2)
    return float(-(b * pv).sum() - l1 + l2_conjugate(pv, model.kappa))


@dataclass(frozen=True)
class LiftedCoefficients:
    """Atom representation of B(X), Sigma(X), L1(X), U_T(X) on E_n."""

    B: np.ndarray       # (n, d)
    Sigma: np.ndarray   # (n, d, d')
    L1: float
    UT: float


def lifted_coefficients(model: ModelSpec, atoms) -> LiftedCoefficients:
    """Component-wise lift evaluation: B_i = b(x_i, mu_x), etc."""
    a = _as_atoms(atoms)
    B, S, L1, UT = _lifted_batch(model, a[None, ...])
    return LiftedCoefficients(B[0], S[0], float(L1[0]), float(UT[0]))


def _lifted_batch(model: ModelSpec, states, strict=True):
    """Vectorized lift evaluation over leading batch axes; states (..., n, d)."""
    m1, m2 = model.features(states)
    m1b = m1[..., None, :]
    m2b = m2[..., None]
    B = model.drift_at(states, m1b, m2b, strict=strict)
    S = model.sigma_at(states, m1b, m2b, strict=strict)
    L1 = model.l1_at(states, m1b, m2b, strict=strict).mean(axis=-1)
    UT = model.terminal_at(m1, m2, strict=strict)
    return B, S, L1, UT


# -- registry ----------------------------------------------------------------


def _build(name, d, d_prime, b, sigma, l1, kappa, UT, affine, convex) -> ModelSpec:
    return ModelSpec(
        name=name,
        d=d,
        d_prime=d_prime,
        drift=tuple(ex.parse_coefficient(s) for s in b),
        sigma=tuple(tuple(ex.parse_coefficient(s) for s in row) for row in sigma),
        l1=ex.parse_coefficient(l1),
        kappa=kappa,
        terminal=ex.parse_coefficient(UT),
        is_affine_lift=affine,
        lift_convex=convex,
    )


def _registry() -> dict:
    return {
        # Constant coefficients: affine lift, convex lift, C^{1,1} by construction.
        "LQ-decoupled": _build(
            "LQ-decoupled", 1, 1, ["0"], [["1"]], "0", 1.0, "0.5*m2", True, True
        ),
        # Affine mean interaction; lift stays affine linear and C^{1,1}.
        "LQ-mean-reverting": _build(
            "LQ-mean-reverting", 1, 1, ["-x[0] + m1[0]"], [["1"]], "0", 1.0,
            "0.5*m2", True, True,
        ),
        # Diffusion depends on the measure through a smooth scalar statistic
        # g(int zeta dmu) with g = tanh, zeta affine: Lipschitz with a C^{1,1}
        # lift (bounded smooth g of a linear statistic), but not affine.
        "tanh-interaction": _build(
            "tanh-interaction", 1, 1, ["-x[0]"], [["0.6 + 0.3*tanh(m1[0])"]],
            "0.5*(x[0] - m1[0])^2", 1.0, "0.5*m2", False, False,
        ),
    }


REGISTRY = _registry()


def registry_model(name: str) -> ModelSpec:
    if name not in REGISTRY:
        raise KeyError(f"unknown registry model {name!r}; have {sorted(REGISTRY)}")
    return REGISTRY[name]


def model_from_json(doc) -> ModelSpec:
    """Build a ModelSpec from the JSON model document (or a registry shortcut)."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    if "registry" in doc:
        return registry_model(doc["registry"])
    required = {"d", "d_prime", "b", "sigma", "l1", "kappa", "UT"}
    missing = required - doc.keys()
    if missing:
        raise ValueError(f"model document missing keys: {sorted(missing)}")
    return _build(
        doc.get("name", "custom"),
        int(doc["d"]),
        int(doc["d_prime"]),
        list(doc["b"]),
        [list(row) for row in doc["sigma"]],
        doc["l1"],
        float(doc["kappa"]),
        doc["UT"],
        bool(doc.get("is_affine_lift", False)),
        bool(doc.get("lift_convex", False)),
    )


# -- assumption probe ---------------------------------------------------------


def assumption_probe(model: ModelSpec, sample_count: int, radius: float, rng_seed: int,
                     r: float = 1.0, n_atoms: int = 4) -> dict:
    """Sampled Lipschitz estimates for b, sigma, l1, U_T w.r.t. |.| x d_r.

    Reports the max difference quotient over random pairs inside the radius and
    flags coefficients whose quotient keeps growing when the radius doubles
    (evidence against a global Lipschitz bound). Report-only, never a gate.
    """
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")

    def estimate(rad: float, seed_shift: int) -> dict:
        rng = np.random.default_rng(rng_seed + seed_shift)
        best = {"b": 0.0, "sigma": 0.0, "l1": 0.0, "UT": 0.0}
        for _ in range(sample_count):
            ax = rng.uniform(-rad, rad, size=(n_atoms, model.d))
            ay = rng.uniform(-rad, rad, size=(n_atoms, model.d))
            px = rng.uniform(-rad, rad, size=model.d)
            py = rng.uniform(-rad, rad, size=model.d)
            dr = wasserstein_r(ax, ay, r)
            denom = np.linalg.norm(px - py) + dr
            if denom < 1e-12:
                continue
            m1x, m2x = model.features(ax)
            m1y, m2y = model.features(ay)
            bq = np.linalg.norm(model.drift_at(px, m1x, m2x) - model.drift_at(py, m1y, m2y))
            sq = np.linalg.norm(model.sigma_at(px, m1x, m2x) - model.sigma_at(py, m1y, m2y))
            lq = abs(float(model.l1_at(px, m1x, m2x)) - float(model.l1_at(py, m1y, m2y)))
            uq = abs(float(model.terminal_at(m1x, m2x)) - float(model.terminal_at(m1y, m2y)))
            if dr < 1e-12:  # U_T only moves with the measure
                uq_den = None
            else:
                uq_den = dr
            best["b"] = max(best["b"], bq / denom)
            best["sigma"] = max(best["sigma"], sq / denom)
            best["l1"] = max(best["l1"], lq / denom)
            if uq_den is not None:
                best["UT"] = max(best["UT"], uq / uq_den)
        return best

    at_radius = estimate(radius, 0)
    at_double = estimate(2.0 * radius, 1)
    flagged = sorted(
        k for k in at_radius
        if at_double[k] > 1.5 * max(at_radius[k], 1e-12) and at_double[k] > 1e-9
    )
    return {
        "radius": radius,
        "sample_count": sample_count,
        "estimates": at_radius,
        "estimates_double_radius": at_double,
        "flagged_non_lipschitz": flagged,
    }
