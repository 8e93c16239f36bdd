"""UCB arm selection and the reward/penalty ledger.

The state is an immutable value: :func:`update_reward` returns a new state and
never touches the old one, which keeps replay and auditing trivial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .errors import ArmOutOfRange, NoArms

MODES = ("mean", "cumulative")


@dataclass(frozen=True, slots=True)
class Pull:
    step: int
    arm: int
    b: int
    g: int
    d: int

    @property
    def reward(self) -> int:
        return 3 * self.b - self.g - self.d


@dataclass(frozen=True)
class BanditState:
    Q: tuple[float, ...]
    N: tuple[int, ...]
    C: float = 0.1
    mode: str = "mean"
    pull_log: tuple[Pull, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.Q) != len(self.N):
            raise ValueError("Q and N must have the same length")
        if self.C < 0:
            raise ValueError(f"exploration constant must be non-negative, got {self.C}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @classmethod
    def fresh(cls, n_arms: int, C: float = 0.1, mode: str = "mean") -> "BanditState":
        if n_arms < 1:
            raise NoArms("a bandit needs at least one arm")
        return cls((0.0,) * n_arms, (0,) * n_arms, C, mode)

    @property
    def n_arms(self) -> int:
        return len(self.N)

    @property
    def t(self) -> int:
        return sum(self.N)

    def to_dict(self) -> dict:
        return {
            "Q": list(self.Q),
            "N": list(self.N),
            "C": self.C,
            "mode": self.mode,
            "pullLog": [[p.step, p.arm, p.b, p.g, p.d] for p in self.pull_log],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BanditState":
        log = tuple(Pull(*row) for row in doc.get("pullLog", ()))
        return cls(tuple(float(q) for q in doc["Q"]), tuple(int(n) for n in doc["N"]), float(doc["C"]), doc["mode"], log)


def ucb_scores(state: BanditState) -> list[float]:
    """UCB score per arm; only defined once every arm has been pulled."""
    t = state.t
    bonus = [state.C * math.sqrt(math.log(t) / n) for n in state.N]
    if state.mode == "mean":
        base = [q / n for q, n in zip(state.Q, state.N)]
    else:
        base = list(state.Q)
    return [b + e for b, e in zip(base, bonus)]


def _argmax(values) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def select_arm(state: BanditState) -> int:
    """Lowest-index unpulled arm if any, else the UCB argmax (ties to lowest index)."""
    if state.n_arms == 0:
        raise NoArms("a bandit needs at least one arm")
    for a, n in enumerate(state.N):
        if n == 0:
            return a
    return _argmax(ucb_scores(state))


def update_reward(state: BanditState, arm: int, outcome) -> BanditState:
    """Count one pull of ``arm`` and apply ``+b``, ``-(g-b)`` and ``-(d-b)``.

    ``outcome`` is anything with integer ``b``, ``g`` and ``d`` attributes,
    normally a :class:`~bds.evaluation.MatchOutcome`.
    """
    b, g, d = outcome.b, outcome.g, outcome.d
    if not 0 <= arm < state.n_arms:
        raise ArmOutOfRange(f"arm {arm} outside pool of {state.n_arms}")
    if min(b, g, d) < 0 or b > min(g, d):
        raise ValueError(f"inconsistent counts b={b} g={g} d={d}")
    delta = b - (g - b) - (d - b)
    Q = list(state.Q)
    N = list(state.N)
    Q[arm] += delta
    N[arm] += 1
    pull = Pull(len(state.pull_log) + 1, arm, b, g, d)
    return replace(state, Q=tuple(Q), N=tuple(N), pull_log=state.pull_log + (pull,))


def best_arm(state: BanditState) -> int:
    """Arm with the highest cumulative reward, whatever the scoring mode."""
    if state.n_arms == 0:
        raise NoArms("a bandit needs at least one arm")
    return _argmax(state.Q)


def replay(n_arms: int, pulls, C: float = 0.1, mode: str = "mean") -> BanditState:
    state = BanditState.fresh(n_arms, C, mode)
    for p in pulls:
        state = update_reward(state, p.arm, p)
    return state
