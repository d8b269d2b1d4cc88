"""Randomized equivalence checks between step recursions and dense oracles.

Each ``check_*`` function draws random histories, runs the recursion engine
and the matching oracle side by side, and returns the largest relative error
seen at any step of any history.
"""
from __future__ import annotations

import itertools

import numpy as np

from . import oracle as O
from .steps import DenseCurvature, StepState, q_step, q_step_variable_lambda, so_step, woqm_step

RHOS = (0.0, 0.33, 0.5, 0.95)
LAMS = (1.0, 100.0)
DIMS = (2, 4, 8)


def rel_err(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))


def history_grid(n: int, seed: int, max_k: int, dims=DIMS, rhos=RHOS, lams=LAMS):
    """``n`` random histories cycling through the (d, rho, lam) grid."""
    rng = np.random.default_rng(seed)
    grid = list(itertools.product(dims, rhos, lams))
    for j in range(n):
        d, rho, lam = grid[j % len(grid)]
        steps = int(rng.integers(1, max_k + 2))
        yield O.random_history(rng, d, steps, rho, lam)


def check_woqm(n: int = 50, seed: int = 0, max_k: int = 20) -> float:
    worst = 0.0
    for h in history_grid(n, seed, max_k):
        ref = O.WakeHistory(h.rho, h.lam, g=h.g, b=h.b)
        for k in range(len(h.g)):
            curv = DenseCurvature(O.ea_matrix(h.b, h.rho, k), None, h.lam)
            worst = max(worst, rel_err(woqm_step(curv, h.g[k], h.lam), O.solve_woqm_dense(ref, k)))
    return worst


def check_so(n: int = 50, seed: int = 1, max_k: int = 20) -> float:
    worst = 0.0
    for h in history_grid(n, seed, max_k):
        ref = O.WakeHistory(h.rho, h.lam, g=h.g, f=h.f)
        state = StepState.initial(h.dim, h.rho)
        for k in range(len(h.g)):
            curv = DenseCurvature(O.ea_matrix(h.f, h.rho, k), None, h.lam)
            s, state = so_step(curv, h.g[k], state, h.lam)
            worst = max(worst, rel_err(s, O.solve_so_dense(ref, k)))
    return worst


def run_q(h, lam_sched=None):
    """Q-recursion steps for every index of ``h``."""
    fixed = lam_sched is None
    state = StepState.initial(h.dim, h.rho)
    out = []
    for k in range(len(h.g)):
        lam = h.lam if fixed else lam_sched(k)
        curv = DenseCurvature(O.ea_matrix(h.f, h.rho, k), h.b[k], lam)
        if fixed:
            s, state = q_step(curv, h.g[k], state, lam)
        else:
            s, state = q_step_variable_lambda(curv, h.g[k], state, lam)
        out.append(s)
    return out


def check_q(n: int = 50, seed: int = 2, max_k: int = 12) -> float:
    worst = 0.0
    for h in history_grid(n, seed, max_k):
        ref = O.WakeHistory(h.rho, h.lam, g=h.g, f=h.f, b=h.b)
        for k, s in enumerate(run_q(h)):
            worst = max(worst, rel_err(s, O.solve_q_dense(ref, k)))
    return worst


def decaying_schedule(k: int) -> float:
    return 100.0 / (1.0 + 0.1 * k)


def check_varlambda(n: int = 20, seed: int = 3, max_k: int = 12, d: int = 6) -> float:
    worst = 0.0
    for h in history_grid(n, seed, max_k, dims=(d,)):
        ref = O.WakeHistory(h.rho, h.lam, g=h.g, f=h.f, b=h.b)
        for k, s in enumerate(run_q(h, decaying_schedule)):
            worst = max(worst, rel_err(s, O.solve_q_dense_varlambda(ref, decaying_schedule, k)))
    return worst


def check_kld_form(n: int = 20, seed: int = 4, d: int = 6, k: int = 8) -> float:
    """Largest relative gap between the KL-form gradient and the wake-model gradient."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for j in range(n):
        rho = RHOS[j % len(RHOS)]
        lam = LAMS[j % len(LAMS)]
        h = O.random_history(rng, d, k + 1, rho, lam)
        h.b = h.f
        for i in range(k):
            h.record(i, rng.standard_normal(d))
        s = rng.standard_normal(d)
        worst = max(worst, rel_err(O.kld_form_grad(h, k, s), O.woqm_objective_grad(h, k, s)))
    return worst


CHECKS = {
    "woqm": check_woqm,
    "so": check_so,
    "q": check_q,
    "q_variable_lambda": check_varlambda,
    "kl_form_gradient": check_kld_form,
}
