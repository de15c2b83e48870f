"""Selector policies and move-imitation baselines.

Selector policies pick one function name per stage from the retrieved
candidates. Move policies (``propose_moves``) bypass the function pipeline and
emit final pursuer targets directly; the planner applies them unchecked, so
illegal targets cost violations.
"""

from __future__ import annotations

import json
import logging
import os
import random
import urllib.request
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .function_base import build_default_base
from .grid_world import BoardConfig, GameState, GridPoint
from .planner import SelectionContext, TaskSpec, run_episode
from .retriever import RankedCandidates, RetrievalQuery, Retriever

log = logging.getLogger(__name__)


class NoStageMatch(LookupError):
    pass


def oracle_select(q: RetrievalQuery | None, candidates: RankedCandidates, ctx: SelectionContext) -> str:
    """The candidate whose stage tag equals the current stage."""
    matches = sorted(n for n in candidates.names() if ctx.specs[n].stage_tag == ctx.stage_tag)
    if not matches:
        raise NoStageMatch(f"no candidate serves stage {ctx.stage_tag}: {candidates.names()}")
    if len(matches) > 1:
        raise NoStageMatch(f"ambiguous candidates for stage {ctx.stage_tag}: {matches}")
    return matches[0]


def noisy_select(
    q: RetrievalQuery | None,
    candidates: RankedCandidates,
    ctx: SelectionContext,
    epsilon: float,
    rng: random.Random,
) -> str:
    """Oracle choice with probability 1 - epsilon, else a uniform wrong candidate."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    right = oracle_select(q, candidates, ctx)
    others = [n for n in candidates.names() if n != right]
    # draw both numbers every call so the stream advances identically
    coin = rng.random()
    pick = rng.randrange(len(others)) if others else 0
    if not others or coin >= epsilon:
        return right
    return others[pick]


class OraclePolicy:
    spec = "oracle"

    def select(self, q, candidates: RankedCandidates, ctx: SelectionContext) -> str:
        return oracle_select(q, candidates, ctx)


class NoisyPolicy:
    def __init__(self, epsilon: float):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.epsilon = epsilon
        self.spec = f"noisy:{epsilon}"

    def select(self, q, candidates: RankedCandidates, ctx: SelectionContext) -> str:
        return noisy_select(q, candidates, ctx, self.epsilon, ctx.rng)


class FixedMovePolicy:
    """Always proposes the same target for every pursuer (off-board by default)."""

    def __init__(self, target: GridPoint = GridPoint(-1, -1)):
        self.target = target
        self.spec = f"fixed:{target.x},{target.y}"

    def propose_moves(self, state: GameState) -> tuple[GridPoint, ...]:
        return tuple(self.target for _ in state.pursuers)


# --- KD baseline: memorized state -> moves --------------------------------------

StateKey = tuple[int, ...]


def state_key(state: GameState) -> StateKey:
    """Canonical key: pursuer coordinates in index order, then the evader."""
    out: list[int] = []
    for p in state.pursuers:
        out += [p.x, p.y]
    return tuple(out + [state.evader.x, state.evader.y])


def relative_key(key: StateKey) -> StateKey:
    """Pursuer offsets from the evader, in pursuer index order."""
    ex, ey = key[-2], key[-1]
    return tuple(v - (ex if i % 2 == 0 else ey) for i, v in enumerate(key[:-2]))


@dataclass(frozen=True)
class MemorizedCorpus:
    """Teacher (state, pursuer targets) pairs, deduplicated and sorted by key."""

    keys: tuple[StateKey, ...]
    moves: tuple[tuple[GridPoint, ...], ...]

    def __post_init__(self) -> None:
        if len(self.keys) != len(self.moves):
            raise ValueError("keys and moves differ in length")
        object.__setattr__(self, "_abs", np.asarray(self.keys, dtype=np.int64).reshape(len(self.keys), -1))
        object.__setattr__(
            self, "_rel", np.asarray([relative_key(k) for k in self.keys], dtype=np.int64).reshape(len(self.keys), -1)
        )

    def __len__(self) -> int:
        return len(self.keys)

    @classmethod
    def from_records(cls, records: Iterable[tuple[GameState, Sequence[GridPoint]]]) -> "MemorizedCorpus":
        table: dict[StateKey, tuple[GridPoint, ...]] = {}
        for state, moves in records:
            table.setdefault(state_key(state), tuple(moves))
        keys = tuple(sorted(table))
        return cls(keys, tuple(table[k] for k in keys))

    def nearest(self, key: StateKey) -> int:
        """Index of the closest record.

        Distance is the summed per-agent Manhattan distance between the
        evader-centred configurations; ties go to the smaller absolute
        distance, then to the smaller key (records are stored sorted).
        """
        rel = np.abs(self._rel - np.asarray(relative_key(key))).sum(axis=1)
        absolute = np.abs(self._abs - np.asarray(key)).sum(axis=1)
        order = np.lexsort((absolute, rel))
        return int(order[0])

    def to_records(self) -> list[dict]:
        return [{"key": list(k), "moves": [p.as_list() for p in m]} for k, m in zip(self.keys, self.moves)]


def build_corpus(
    n_starts: int = 221,
    seed: int = 0,
    board: BoardConfig | None = None,
    teacher=None,
    retriever: Retriever | None = None,
) -> MemorizedCorpus:
    """Record every (state, pursuer moves) pair of teacher episodes from random starts."""
    task = TaskSpec(board=board or BoardConfig())
    teacher = teacher or OraclePolicy()
    retriever = retriever or Retriever(build_default_base())
    rng = random.Random(f"kd-train:{seed}")
    records = []
    for _ in range(n_starts):
        trace = run_episode(task, teacher, retriever, seed=rng.randrange(2**31))
        prev = trace.initial
        for step in trace.steps:
            if len(step.proposals) == len(prev.pursuers):
                records.append((prev, step.proposals))
            prev = step.state_after
    return MemorizedCorpus.from_records(records)


def kd_mimic_select_moves(state: GameState, corpus: MemorizedCorpus) -> tuple[GridPoint, ...]:
    """Replay the memorized moves of the closest stored state.

    On an exact match this is the stored record itself. Each pursuer repeats
    the displacement its counterpart made in the stored record, starting from
    where it stands now; nothing checks that the result is on the board or
    outside a restricted area.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    i = corpus.nearest(state_key(state))
    stored = corpus.keys[i]
    out = []
    for j, (here, target) in enumerate(zip(state.pursuers, corpus.moves[i])):
        dx, dy = target.x - stored[2 * j], target.y - stored[2 * j + 1]
        out.append(GridPoint(here.x + dx, here.y + dy))
    return tuple(out)


class KDMimicPolicy:
    def __init__(self, corpus: MemorizedCorpus, spec: str = "kd"):
        self.corpus = corpus
        self.spec = spec

    def propose_moves(self, state: GameState) -> tuple[GridPoint, ...]:
        return kd_mimic_select_moves(state, self.corpus)


# --- remote selector --------------------------------------------------------------


class RemotePolicy:
    """Asks an HTTP endpoint to choose the function.

    Request (``POST``, JSON)::

        {"instructions": str, "state": str, "stage": float,
         "candidates": [{"name": str, "score": float, "stage_tag": float,
                         "manual": {...four fields...}}, ...]}

    Response: ``{"name": str}``. A reply that is malformed or names a
    function outside the candidates is retried once; if the retry also fails
    the returned name is ``""``, which the planner records as a selection
    fault. A bearer token is sent when ``LD_REMOTE_TOKEN`` is set.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0, retries: int = 1, token_env: str = "LD_REMOTE_TOKEN"):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries
        self.token_env = token_env
        self.spec = f"remote:{endpoint}"

    def request_body(self, q: RetrievalQuery | None, candidates: RankedCandidates, ctx: SelectionContext) -> dict:
        return {
            "instructions": q.instructions if q is not None else "",
            "state": ctx.state.render(),
            "stage": ctx.stage_tag,
            "candidates": [
                {
                    "name": name,
                    "score": score,
                    "stage_tag": ctx.specs[name].stage_tag,
                    "manual": ctx.specs[name].to_record()["manual"],
                }
                for name, score in candidates.items
            ],
        }

    def _post(self, body: dict) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        req = urllib.request.Request(self.endpoint, data=json.dumps(body).encode("utf-8"), headers=headers)
        with urllib.request.urlopen(req, timeout=self.timeout) as resp:
            payload = json.loads(resp.read().decode("utf-8"))
        name = payload["name"]
        if not isinstance(name, str):
            raise ValueError(f"non-string name {name!r}")
        return name

    def select(self, q, candidates: RankedCandidates, ctx: SelectionContext) -> str:
        body = self.request_body(q, candidates, ctx)
        for attempt in range(self.retries + 1):
            try:
                name = self._post(body)
            except Exception as exc:  # noqa: BLE001 - transport and parse errors alike
                log.warning("remote selector attempt %d failed: %s", attempt + 1, exc)
                continue
            if name in candidates:
                return name
            log.warning("remote selector attempt %d returned %r, not a candidate", attempt + 1, name)
        return ""


def make_policy(spec: str, seed: int = 0, board: BoardConfig | None = None):
    """Build a policy from its spec string.

    ``oracle`` | ``noisy:<eps>`` | ``kd[:<starts>[:<train_seed>]]`` |
    ``fixed[:x,y]`` | ``remote:<url>``

    ``board`` is the board the KD teacher plays on while building its corpus.
    """
    kind, _, arg = spec.partition(":")
    if kind == "oracle":
        return OraclePolicy()
    if kind == "noisy":
        return NoisyPolicy(float(arg or 0.1))
    if kind == "kd":
        parts = arg.split(":") if arg else []
        starts = int(parts[0]) if parts else 221
        train_seed = int(parts[1]) if len(parts) > 1 else seed
        corpus = build_corpus(starts, train_seed, board=board)
        return KDMimicPolicy(corpus, spec=f"kd:{starts}:{train_seed}")
    if kind == "fixed":
        if arg:
            x, y = (int(v) for v in arg.split(","))
            return FixedMovePolicy(GridPoint(x, y))
        return FixedMovePolicy()
    if kind == "remote":
        if not arg:
            raise ValueError("remote policy needs an endpoint URL")
        return RemotePolicy(arg)
    raise ValueError(f"unknown policy {spec!r}")
