"""Wire protocol for the human-play server: versioned JSON text messages.

Message set: hello, lobby, episode_start, state_delta, action, tax_update,
episode_end, survey. Every message carries ``type`` and ``v``. Cell codes in
deltas: 0 empty, 1 wood unit, 2 stone unit, 10+owner for a house owned by
that agent id.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

PROTOCOL_VERSION = 1

CELL_EMPTY = 0
CELL_WOOD = 1
CELL_STONE = 2
CELL_HOUSE_BASE = 10


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Hello:
    """Client -> server. Opaque token authenticates and keys reconnection."""

    token: str
    TYPE = "hello"


@dataclass(frozen=True)
class Lobby:
    """Server -> client: phase and queue state."""

    phase: str                     # tutorial | waiting | playing | survey | done
    waiting: int = 0
    needed: int = 0
    tutorial_seconds_left: float = 0.0
    TYPE = "lobby"


@dataclass(frozen=True)
class EpisodeStart:
    """Server -> client: static map layers and the player's own setup."""

    episode_index: int
    agent_id: int
    rows: int
    cols: int
    water: list                     # [[r, c], ...]
    sources: list                   # [[r, c, kind], ...]
    building_skill: float
    collection_skill: float
    episode_length: int
    tax_period: int
    tick_hz: float
    qualification: bool
    TYPE = "episode_start"


@dataclass(frozen=True)
class StateDelta:
    """Server -> client, per tick: changed cells, agent positions, own HUD."""

    t: int
    cells: list                     # [[r, c, code], ...] changed since last tick
    agents: list                    # [[agent_id, r, c], ...]
    hud: dict
    TYPE = "state_delta"


@dataclass(frozen=True)
class Action:
    """Client -> server: one buffered action, latest per tick wins."""

    action: str                     # up | down | left | right | build | noop
    TYPE = "action"


@dataclass(frozen=True)
class TaxUpdate:
    """Server -> client at period starts (omitted in qualification mode)."""

    t: int
    rates: list
    cutoffs: list                   # interior cutoffs (finite)
    TYPE = "tax_update"


@dataclass(frozen=True)
class EpisodeEnd:
    episode_index: int
    utility: float
    bonus_usd: float
    episodes_remaining: int
    TYPE = "episode_end"


@dataclass(frozen=True)
class Survey:
    """Both directions: questions (server), answers (client), completion."""

    questions: list = field(default_factory=list)
    answers: dict = field(default_factory=dict)
    completion_code: str = ""
    complete: bool = False
    TYPE = "survey"


MESSAGE_TYPES = {
    cls.TYPE: cls
    for cls in (Hello, Lobby, EpisodeStart, StateDelta, Action, TaxUpdate,
                EpisodeEnd, Survey)
}

VALID_ACTIONS = ("noop", "up", "down", "left", "right", "build")


def encode(msg) -> str:
    cls = type(msg)
    if cls.TYPE not in MESSAGE_TYPES:
        raise ProtocolError(f"not a protocol message: {cls!r}")
    payload = {"type": cls.TYPE, "v": PROTOCOL_VERSION}
    payload.update(asdict(msg))
    return json.dumps(payload, separators=(",", ":"))


def decode(text: str):
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as err:
        raise ProtocolError(f"malformed message: {err}") from err
    if not isinstance(payload, dict):
        raise ProtocolError("message must be an object")
    kind = payload.pop("type", None)
    version = payload.pop("v", None)
    if kind not in MESSAGE_TYPES:
        raise ProtocolError(f"unknown message type {kind!r}")
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version!r}")
    cls = MESSAGE_TYPES[kind]
    allowed = {f.name for f in fields(cls)}
    unknown = set(payload) - allowed
    if unknown:
        raise ProtocolError(f"unknown field(s) {sorted(unknown)} for {kind}")
    try:
        msg = cls(**payload)
    except TypeError as err:
        raise ProtocolError(f"bad {kind} message: {err}") from err
    if kind == "action" and msg.action not in VALID_ACTIONS:
        raise ProtocolError(f"unknown action {msg.action!r}")
    return msg
