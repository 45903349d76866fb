"""Desk-scale feasibility verification by falsification.

Full algebraic (sum-of-squares) certification of the constraint-set emptiness
conditions needs an SDP stack and is out of scope; these checks instead hunt
for counterexamples: pointwise Farkas certificates at sampled configurations
of estimates and estimation errors (sensor case) or states in the safe box
(actuator case). A clean report therefore says "no counterexample in N
samples", never "verified"; a returned counterexample is a sound witness of
infeasibility and reproduces as an infeasible QP on the same rows.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .barriers import BarrierChain, af_rows
from .errors import ContractError, RedundancyError
from .optimizer import farkas_certificate
from .simulator import SystemModel


def verify_scbf_pointwise(chain: BarrierChain, model: SystemModel, x_hat: np.ndarray,
                          gamma: float, est=None) -> dict:
    """Single-constraint check at one estimate.

    If dh^{d'}/dx g(x_hat) != 0 a feasible input always exists. Otherwise the
    slack xi is minimized in closed form over the gamma ball (the z term is
    linear, so the minimizer is -gamma * (dh/dx K c)^T / ||.||) and a negative
    minimum is returned as a counterexample together with the violating z.
    """
    d = chain.rel_degree
    x_hat = np.asarray(x_hat, dtype=float)
    w = chain.grad(d, x_hat)
    row = w @ model.g(x_hat)
    if np.max(np.abs(row)) > 1e-12:
        return {"feasible": True, "reason": "control enters the constraint", "z": None}
    trace = 0.0
    z_dir = np.zeros(model.n)
    z_gain = 0.0
    if est is not None and est.K is not None:
        KN = est.K @ est.nu_r
        trace = 0.5 * float(np.trace(KN.T @ chain.hessian(d, x_hat) @ KN))
        wKc = w @ est.K @ est.c_r
        z_gain = float(np.linalg.norm(wKc))
        if z_gain > 0:
            z_dir = -np.asarray(wKc, dtype=float) / z_gain
    xi_min = float(w @ model.f(x_hat)) + trace + chain.shrunk(d, x_hat, gamma) - gamma * z_gain
    if xi_min < 0.0:
        return {"feasible": False, "xi_min": xi_min, "z": gamma * z_dir}
    return {"feasible": True, "xi_min": xi_min, "z": None}


def verify_ft_set_pointwise(chains: Sequence[BarrierChain], model: SystemModel,
                            ests: Sequence, estimates: Sequence[np.ndarray],
                            zs: Sequence[np.ndarray], gammas: Sequence[float],
                            thetas: Optional[dict] = None) -> dict:
    """Farkas check of the m-estimator constraint set at given estimates/errors.

    Assembles A u <= Xi with A_i = -dh/dx g(x_hat_i) and the slack Xi_i using
    the supplied z_i, then asks for a certificate. When pairwise estimate
    distances violate theta_ij the premise of the feasibility condition fails
    and the check is reported vacuous (feasible by premise).
    """
    m = len(estimates)
    if not (len(ests) == len(zs) == len(gammas) == m):
        raise ContractError("estimates, ests, zs, gammas must have equal length")
    if thetas:
        for i in range(m):
            for j in range(i + 1, m):
                lim = thetas.get((i, j), np.inf)
                if np.linalg.norm(np.asarray(estimates[i]) - np.asarray(estimates[j])) > lim:
                    return {"feasible": True, "vacuous": True, "certificate": None}
    A, Xi = [], []
    for i in range(m):
        x_hat = np.asarray(estimates[i], dtype=float)
        est = ests[i]
        for chain in chains:
            d = chain.rel_degree
            w = chain.grad(d, x_hat)
            A.append(-(w @ model.g(x_hat)))
            xi = float(w @ model.f(x_hat)) + chain.shrunk(d, x_hat, gammas[i])
            if est is not None and est.K is not None:
                KN = est.K @ est.nu_r
                xi += 0.5 * float(np.trace(KN.T @ chain.hessian(d, x_hat) @ KN))
                xi += float(w @ est.K @ est.c_r @ np.asarray(zs[i], dtype=float))
            Xi.append(xi)
    y = farkas_certificate(np.array(A), np.array(Xi))
    return {"feasible": y is None, "vacuous": False, "certificate": y}


def latin_hypercube(rng: np.random.Generator, count: int, dims: int,
                    lo: float, hi: float) -> np.ndarray:
    """Stratified (Latin hypercube) samples over the cube [lo, hi]^dims."""
    bins = (np.arange(count)[:, None] + rng.random((count, dims))) / count
    for d in range(dims):
        bins[:, d] = bins[rng.permutation(count), d]
    return lo + bins * (hi - lo)


def _ball_sample(rng: np.random.Generator, dims: int, radius: float) -> np.ndarray:
    v = rng.standard_normal(dims)
    n = np.linalg.norm(v)
    if n == 0.0:
        return np.zeros(dims)
    return v / n * radius * rng.random() ** (1.0 / dims)


def falsify_region(check: Callable[[int], dict], sampler_info: dict, budget: int) -> dict:
    """Run `check(k)` for k = 0..budget-1; first infeasible point wins.

    check returns the pointwise dict (with a "point" entry describing the
    sampled configuration). Deterministic given the sampler seed.
    """
    if budget < 1:
        raise ContractError("falsification budget must be positive")
    for k in range(budget):
        out = check(k)
        if not out["feasible"]:
            return {
                "checked_conditions": sampler_info.get("conditions", ""),
                "samples": k + 1,
                "budget": budget,
                "counterexample": out,
                "seeds": sampler_info.get("seeds", []),
                "verdict": "counterexample",
            }
    return {
        "checked_conditions": sampler_info.get("conditions", ""),
        "samples": budget,
        "budget": budget,
        "counterexample": None,
        "seeds": sampler_info.get("seeds", []),
        "verdict": f"no counterexample in {budget} samples",
    }


def falsify_sensor_region(chains: Sequence[BarrierChain], model: SystemModel,
                          ests: Sequence, gammas: Sequence[float], thetas: dict,
                          box: float, budget: int, seed: int = 0) -> dict:
    """Sample estimate tuples + errors consistent with the calibrated radii.

    Base estimates come from a Latin hypercube over the operating box with
    half the samples projected onto the shrunk-barrier boundary (where rows
    bind); sibling estimates are perturbed within min theta_ij / 2 so every
    pairwise distance respects theta; errors are drawn in the gamma balls.
    """
    m = len(ests)
    rng = np.random.default_rng(seed)
    theta_min = min(thetas.values()) if thetas else 0.0
    base_pts = latin_hypercube(rng, budget, model.n, -box, box)

    def push_to_boundary(x, chain, gamma):
        d = chain.rel_degree
        w = chain.grad(d, x)
        nrm2 = float(w @ w)
        if nrm2 < 1e-14:
            return x
        return x - chain.shrunk(d, x, gamma) * w / nrm2

    def check(k):
        base = base_pts[k].copy()
        if k % 2 == 1:
            chain = chains[k // 2 % len(chains)]
            base = push_to_boundary(base, chain, max(gammas))
        estimates = [base + _ball_sample(rng, model.n, theta_min / 2.0) for _ in range(m)]
        zs = [_ball_sample(rng, model.n, gammas[i]) for i in range(m)]
        out = verify_ft_set_pointwise(chains, model, ests, estimates, zs, gammas, thetas)
        out["point"] = {"estimates": [e.tolist() for e in estimates],
                        "zs": [z.tolist() for z in zs]}
        return out

    info = {"conditions": f"sensor FT-HOSCBF set, m={m}, box={box}", "seeds": [seed]}
    return falsify_region(check, info, budget)


def falsify_actuator_region(af_chain_sets: Sequence[Sequence[BarrierChain]],
                            patterns: Sequence[np.ndarray], model: SystemModel,
                            box: float, budget: int, seed: int = 0,
                            alpha: Callable[[float], float] = lambda s: s) -> dict:
    """Sample states in the safe part of the box and Farkas-check the
    per-pattern row system (all barriers jointly). Half the samples are pushed
    to a barrier boundary, where the constraints bind."""
    rng = np.random.default_rng(seed)
    pts = latin_hypercube(rng, budget, model.n, -box, box)
    barrier_chains = [cs[0] for cs in af_chain_sets]  # unmasked member per barrier

    def safe(x):
        return all(cs[0].value(0, x) >= 0.0 for cs in af_chain_sets)

    def check(k):
        x = pts[k].copy()
        if k % 2 == 1 and barrier_chains:
            ch = barrier_chains[k // 2 % len(barrier_chains)]
            w = ch.grad(0, x)
            nrm2 = float(w @ w)
            if nrm2 > 1e-14:
                x = x - ch.value(0, x) * w / nrm2
        if not safe(x):
            for cs in af_chain_sets:
                ch = cs[0]
                v = ch.value(0, x)
                if v < 0.0:
                    w = ch.grad(0, x)
                    nrm2 = float(w @ w)
                    if nrm2 > 1e-14:
                        x = x - v * w / nrm2
        A, Xi = [], []
        try:
            for chain_set in af_chain_sets:
                for r in af_rows(chain_set, x, patterns, model, alpha=alpha):
                    A.append(-r.row)
                    Xi.append(-r.bound)
        except RedundancyError as exc:
            return {"feasible": False, "certificate": None,
                    "reason": str(exc), "point": {"x": x.tolist()}}
        y = farkas_certificate(np.array(A), np.array(Xi))
        return {"feasible": y is None, "certificate": y,
                "point": {"x": x.tolist()}}

    info = {"conditions": f"actuator CBF set, patterns={len(patterns)}, box={box}",
            "seeds": [seed]}
    return falsify_region(check, info, budget)
