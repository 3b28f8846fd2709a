"""Chance-constrained stochastic optimal control for shooting.

The objective trades off goal probability against goal-line puck speed
under the constraint that the goal probability clears a threshold. The
brute-force solver samples candidate angles, scores each with a common
random-number rollout, and keeps the best feasible one; run offline over
many scenarios it produces the contrastive training set for the energy
policy.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arm import DEFAULT_ANGLE_LIMIT, PlanarArm, ShotPlan, plan_batch, plan_from_angle
from .errors import NoFeasibleShot, OutOfTable, Unreachable
from .model import PuckModel
from .rollout import (
    MAX_ROLLOUT_STEPS,
    ShotEvaluation,
    apply_mallet_collision,
    goal_probability,
    puck_speed_at_goal,
    stochastic_rollout,
)
from .table import MalletState, PuckState, TableGeometry

DEFAULT_GOAL_SAMPLES = 128   # Monte-Carlo draws per goal-probability estimate
DEFAULT_CANDIDATES = 100
SCENARIO_VEL_RANGE = 0.3     # m/s, per-axis contact-velocity range for scenarios


@dataclass(frozen=True)
class SocWeights:
    """Objective weights and chance threshold of the shooting problem."""

    lambda1: float = 1.0
    lambda2: float = 0.2
    beta: float = 0.5

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or (self.lambda1 == 0 and self.lambda2 == 0):
            raise ValueError("weights must be non-negative and not both zero")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")

    def objective(self, g_hat: float, v_puck: float) -> float:
        return self.lambda1 * g_hat + self.lambda2 * v_puck


@dataclass
class ScenarioRecord:
    """Brute-force solution of one scenario: positive angle plus counter-examples."""

    s: np.ndarray            # (4,) puck state at contact
    candidates: np.ndarray   # (M,) sampled angles
    g_hats: np.ndarray       # (M,)
    v_pucks: np.ndarray      # (M,)
    bank_counts: np.ndarray  # (M,)
    pos: int                 # index of the best feasible candidate
    crn_seed: int            # shared Monte-Carlo seed of this scenario
    weights: SocWeights

    @property
    def u_pos(self) -> float:
        return float(self.candidates[self.pos])

    @property
    def u_neg(self) -> np.ndarray:
        return np.delete(self.candidates, self.pos)

    @property
    def js(self) -> np.ndarray:
        return self.weights.lambda1 * self.g_hats + self.weights.lambda2 * self.v_pucks


def _score_plan(
    puck: PuckState,
    plan: ShotPlan | None,
    weights: SocWeights,
    model: PuckModel,
    rng: np.random.Generator,
    n_goal_samples: int,
    max_steps: int,
) -> tuple[ShotEvaluation, float]:
    """Roll out one planned contact and evaluate the objective."""
    if plan is None or plan.v_star <= 0.0:
        return ShotEvaluation(0.0, 0.0, 0, False), 0.0
    belief0 = apply_mallet_collision(puck, MalletState(plan.mallet_pos, plan.mallet_vel), model)
    traj = stochastic_rollout(belief0, model, max_steps=max_steps)
    g_hat = goal_probability(traj, model.geometry, n_goal_samples, rng)
    v_puck = puck_speed_at_goal(traj)
    plan.g_hat = g_hat
    plan.v_puck = v_puck
    evaluation = ShotEvaluation(g_hat, v_puck, traj.bank_count, g_hat > weights.beta)
    return evaluation, weights.objective(g_hat, v_puck)


def evaluate_objective(
    s_contact: np.ndarray,
    u: float,
    weights: SocWeights,
    model: PuckModel,
    arm: PlanarArm,
    rng: np.random.Generator,
    u_limit: float = DEFAULT_ANGLE_LIMIT,
    n_goal_samples: int = DEFAULT_GOAL_SAMPLES,
    max_steps: int = MAX_ROLLOUT_STEPS,
) -> tuple[ShotEvaluation, float, ShotPlan | None]:
    """Score one candidate angle: plan, roll out, evaluate the objective.

    Infeasible kinematics (unreachable pose, pose off the table, or a
    degenerate direction with zero achievable speed) scores as a zero
    evaluation rather than an error.
    """
    s = np.asarray(s_contact, dtype=float).reshape(4)
    puck = PuckState(s[:2], s[2:])
    try:
        plan = plan_from_angle(puck, u, arm, model.geometry, u_limit=u_limit)
    except (OutOfTable, Unreachable):
        return ShotEvaluation(0.0, 0.0, 0, False), 0.0, None
    evaluation, j = _score_plan(puck, plan, weights, model, rng, n_goal_samples, max_steps)
    return evaluation, j, plan


def _pick_positive(js: np.ndarray, g_hats: np.ndarray, candidates: np.ndarray, beta: float) -> int:
    """Best feasible candidate by objective; exact ties resolve to smaller |u|."""
    feasible = np.flatnonzero(g_hats > beta)
    if feasible.size == 0:
        best = int(np.argmax(g_hats))
        raise NoFeasibleShot(
            f"no candidate with goal probability above {beta} "
            f"(best {g_hats[best]:.3f} at angle {candidates[best]:.3f})",
            best_u=float(candidates[best]),
            best_g_hat=float(g_hats[best]),
        )
    order = sorted(feasible, key=lambda i: (-js[i], abs(candidates[i])))
    return int(order[0])


def solve_brute_force(
    s_contact: np.ndarray,
    m_candidates: int,
    weights: SocWeights,
    model: PuckModel,
    arm: PlanarArm,
    rng: np.random.Generator,
    u_limit: float = DEFAULT_ANGLE_LIMIT,
    n_goal_samples: int = DEFAULT_GOAL_SAMPLES,
    max_steps: int = MAX_ROLLOUT_STEPS,
) -> ScenarioRecord:
    """Sample candidate angles uniformly over the action set and keep the best.

    All candidates of a scenario share one Monte-Carlo seed (common random
    numbers), which removes sampling noise from their ranking.

    Raises NoFeasibleShot when no candidate clears the chance constraint.
    """
    if m_candidates < 2:
        raise ValueError("need at least two candidates")
    s = np.asarray(s_contact, dtype=float).reshape(4)
    puck = PuckState(s[:2], s[2:])
    candidates = rng.uniform(-u_limit, u_limit, m_candidates)
    crn_seed = int(rng.integers(2**63))
    plans, _ = plan_batch(puck, candidates, arm, model.geometry, u_limit=u_limit)
    g_hats = np.zeros(m_candidates)
    v_pucks = np.zeros(m_candidates)
    banks = np.zeros(m_candidates, dtype=int)
    for i, plan in enumerate(plans):
        evaluation, _ = _score_plan(
            puck, plan, weights, model,
            rng=np.random.default_rng(crn_seed),
            n_goal_samples=n_goal_samples, max_steps=max_steps,
        )
        g_hats[i] = evaluation.g_hat
        v_pucks[i] = evaluation.v_puck
        banks[i] = evaluation.bank_count
    js = weights.lambda1 * g_hats + weights.lambda2 * v_pucks
    pos = _pick_positive(js, g_hats, candidates, weights.beta)
    return ScenarioRecord(
        s=s,
        candidates=candidates,
        g_hats=g_hats,
        v_pucks=v_pucks,
        bank_counts=banks,
        pos=pos,
        crn_seed=crn_seed,
        weights=weights,
    )


def relabel(record: ScenarioRecord, weights: SocWeights) -> ScenarioRecord:
    """Re-pick the positive candidate under different objective weights.

    Valid because the per-candidate evaluations do not depend on the
    weights; raises NoFeasibleShot under a stricter threshold.
    """
    js = weights.lambda1 * record.g_hats + weights.lambda2 * record.v_pucks
    pos = _pick_positive(js, record.g_hats, record.candidates, weights.beta)
    return ScenarioRecord(
        s=record.s, candidates=record.candidates, g_hats=record.g_hats,
        v_pucks=record.v_pucks, bank_counts=record.bank_counts,
        pos=pos, crn_seed=record.crn_seed, weights=weights,
    )


def sample_scenario(rng: np.random.Generator, geom: TableGeometry,
                    vel_range: float = SCENARIO_VEL_RANGE) -> np.ndarray:
    """Contact-time puck state: uniform over the robot's half with wall margin."""
    r = geom.puck_radius
    pos = rng.uniform([r, -geom.half_width + r], [geom.half_length, geom.half_width - r])
    vel = rng.uniform(-vel_range, vel_range, 2)
    return np.concatenate([pos, vel])


def _scenario_attempt(args) -> ScenarioRecord | None:
    (seed, attempt, m_candidates, weights, model, arm, u_limit,
     n_goal_samples, vel_range) = args
    rng = np.random.default_rng([seed, 0x5EED, attempt])
    s = sample_scenario(rng, model.geometry, vel_range)
    try:
        return solve_brute_force(
            s, m_candidates, weights, model, arm, rng,
            u_limit=u_limit, n_goal_samples=n_goal_samples,
        )
    except NoFeasibleShot:
        return None


def generate_dataset(
    n_scenarios: int,
    m_candidates: int,
    weights: SocWeights,
    model: PuckModel,
    arm: PlanarArm,
    seed: int,
    u_limit: float = DEFAULT_ANGLE_LIMIT,
    n_goal_samples: int = DEFAULT_GOAL_SAMPLES,
    vel_range: float = SCENARIO_VEL_RANGE,
    workers: int = 1,
) -> list[ScenarioRecord]:
    """Solve the shooting problem offline for randomly drawn scenarios.

    Scenarios without any feasible candidate are dropped and resampled, so
    every record's positive satisfies the chance constraint. Results are
    keyed by attempt index, making the output independent of worker count
    and scheduling.
    """
    if n_scenarios <= 0 or m_candidates <= 0:
        raise ValueError("counts must be positive")
    records: list[ScenarioRecord] = []
    next_attempt = 0
    batch = max(8 * workers, 32)

    def args_for(attempts):
        return [
            (seed, a, m_candidates, weights, model, arm, u_limit, n_goal_samples, vel_range)
            for a in attempts
        ]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            while len(records) < n_scenarios:
                attempts = range(next_attempt, next_attempt + batch)
                next_attempt += batch
                for rec in pool.map(_scenario_attempt, args_for(attempts)):
                    if rec is not None and len(records) < n_scenarios:
                        records.append(rec)
    else:
        while len(records) < n_scenarios:
            rec = _scenario_attempt(args_for([next_attempt])[0])
            next_attempt += 1
            if rec is not None:
                records.append(rec)
    return records


def save_dataset(path: str | Path, records: list[ScenarioRecord], meta: dict | None = None) -> None:
    """Write records as JSON lines with a leading metadata line."""
    w = records[0].weights if records else SocWeights()
    head = {
        "_meta": dict(
            meta or {},
            weights={"lambda1": w.lambda1, "lambda2": w.lambda2, "beta": w.beta},
            n_scenarios=len(records),
        )
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(head, sort_keys=True) + "\n")
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "s": rec.s.tolist(),
                        "u": rec.candidates.tolist(),
                        "g": rec.g_hats.tolist(),
                        "v": rec.v_pucks.tolist(),
                        "banks": rec.bank_counts.tolist(),
                        "pos": rec.pos,
                        "crn_seed": rec.crn_seed,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_dataset(path: str | Path) -> tuple[list[ScenarioRecord], dict]:
    with open(path) as fh:
        head = json.loads(fh.readline())
        meta = head.get("_meta", {})
        wm = meta.get("weights", {})
        weights = SocWeights(
            lambda1=wm.get("lambda1", 1.0), lambda2=wm.get("lambda2", 0.2),
            beta=wm.get("beta", 0.5),
        )
        records = []
        for line in fh:
            if not line.strip():
                continue
            d = json.loads(line)
            records.append(
                ScenarioRecord(
                    s=np.asarray(d["s"]),
                    candidates=np.asarray(d["u"]),
                    g_hats=np.asarray(d["g"]),
                    v_pucks=np.asarray(d["v"]),
                    bank_counts=np.asarray(d["banks"], dtype=int),
                    pos=int(d["pos"]),
                    crn_seed=int(d["crn_seed"]),
                    weights=weights,
                )
            )
    return records, meta
