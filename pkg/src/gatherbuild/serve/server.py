"""Real-time human-play server: lobby, per-group 10 Hz tick loops, websockets.

One asyncio task runs each active group's tick loop; connection handlers
only enqueue inputs and drain per-player outboxes (message passing, no
shared mutable state across groups). The simulation is server-authoritative:
clients only ever render what they are sent.
"""

from __future__ import annotations

import asyncio
import json
import secrets
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse

from ..replay import EpisodeRecorder
from .protocol import (
    Action,
    EpisodeEnd,
    Hello,
    Lobby,
    ProtocolError,
    StateDelta,
    Survey,
    decode,
    encode,
)
from .session import EpisodeRunner, Group, Player, SessionConfig, TickClock, SURVEY_QUESTIONS

STATIC_DIR = Path(__file__).parent / "static"


class Session:
    """Lobby and group lifecycle for one server process."""

    def __init__(self, config: SessionConfig):
        self.config = config
        self.players: dict[str, Player] = {}
        self.lobby: list[Player] = []
        self.group_counter = 0
        self.episode_counter = 0
        self._tasks: set = set()

    # -- player lifecycle -------------------------------------------------------

    async def on_hello(self, token: str) -> Player:
        player = self.players.get(token)
        if player is None:
            player = Player(token=token, pseudonym=f"player-{len(self.players)}")
            self.players[token] = player
            player.connected = True
            player.phase = "tutorial"
            player.tutorial_done_at = time.monotonic() + self.config.tutorial_seconds
            player.send(Lobby(phase="tutorial",
                              tutorial_seconds_left=self.config.tutorial_seconds))
            self._spawn(self._tutorial_timer(player))
            return player
        # Reconnect: reattach to the same agent; drop any stale broadcasts.
        player.connected = True
        while not player.outbox.empty():
            player.outbox.get_nowait()
        if player.phase == "playing" and player.group is not None:
            runner = getattr(player.group, "runner", None)
            if runner is not None:
                start = runner.episode_start_message(player.agent_id)
                player.send(start)
                player.send(StateDelta(t=runner.env.t, cells=runner.full_delta_cells(),
                                       agents=[[i, int(a.position[0]), int(a.position[1])]
                                               for i, a in enumerate(runner.env.world.agents)],
                                       hud={}))
                if runner.last_rates_sent is not None:
                    player.send(runner.last_rates_sent)
        elif player.phase == "survey":
            player.send(Survey(questions=SURVEY_QUESTIONS))
        elif player.phase == "done":
            player.send(Survey(complete=True, completion_code=player.completion_code or ""))
        else:
            self._send_lobby_counts()
            player.send(Lobby(phase=player.phase, waiting=len(self.lobby),
                              needed=self.config.group_size))
        return player

    async def _tutorial_timer(self, player: Player):
        delay = player.tutorial_done_at - time.monotonic()
        if delay > 0:
            await asyncio.sleep(delay)
        if player.phase == "tutorial":
            self.join_lobby(player)

    def join_lobby(self, player: Player):
        if player in self.lobby:
            return
        player.phase = "waiting"
        self.lobby.append(player)
        self._send_lobby_counts()
        if len(self.lobby) >= self.config.group_size:
            members = [self.lobby.pop(0) for _ in range(self.config.group_size)]
            group = Group(self, members, self.group_counter)
            self.group_counter += 1
            self._spawn(self._run_group(group))

    def _send_lobby_counts(self):
        for p in self.lobby:
            p.send(Lobby(phase="waiting", waiting=len(self.lobby),
                         needed=self.config.group_size))

    def _spawn(self, coro):
        task = asyncio.create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    # -- episodes ------------------------------------------------------------------

    async def _run_group(self, group: Group):
        cfg = self.config
        for treatment in group.treatments:
            episode_index = self.episode_counter
            self.episode_counter += 1
            recorder = EpisodeRecorder(treatment=treatment) if cfg.replay_dir else None
            runner = EpisodeRunner(
                cfg, treatment, seed=cfg.seed * 100_003 + episode_index,
                recorder=recorder,
            )
            group.runner = runner
            for player in group.players:
                start = runner.episode_start_message(player.agent_id)
                player.send(start)
                player.send(StateDelta(
                    t=0, cells=runner.full_delta_cells(),
                    agents=[[i, int(a.position[0]), int(a.position[1])]
                            for i, a in enumerate(runner.env.world.agents)],
                    hud={},
                ))
            clock = TickClock(cfg.tick_hz)
            while not runner.done:
                await clock.tick()
                actions = {}
                for player in group.players:
                    actions[player.agent_id] = player.pending_action or "noop"
                    player.pending_action = None
                payload = runner.advance(actions)
                for player in group.players:
                    if payload["tax_update"] is not None:
                        player.send(payload["tax_update"])
                    player.send(StateDelta(
                        t=payload["tick"], cells=payload["cells"],
                        agents=payload["agents"],
                        hud=payload["huds"][player.agent_id],
                    ))
            if recorder is not None:
                recorder.finish(runner.env)
                out = Path(cfg.replay_dir)
                recorder.save(out / f"group{group.index}_ep{episode_index}_{treatment}.jsonl")
            for player in group.players:
                player.episodes_played += 1
                utility = float(runner.env._utilities[player.agent_id])
                bonus = utility * cfg.bonus_usd_per_utility
                player.bonus_total += bonus
                player.send(EpisodeEnd(
                    episode_index=player.episodes_played - 1,
                    utility=utility,
                    bonus_usd=bonus,
                    episodes_remaining=cfg.episodes_per_player - player.episodes_played,
                ))
        group.runner = None
        for player in group.players:
            player.group = None
            if player.episodes_played >= cfg.episodes_per_player:
                player.phase = "survey"
                player.send(Survey(questions=SURVEY_QUESTIONS))
            else:
                self.join_lobby(player)

    # -- inbound messages ---------------------------------------------------------

    def handle_action(self, player: Player, msg: Action):
        if player.phase == "playing":
            player.pending_action = msg.action    # latest per tick wins

    def handle_survey(self, player: Player, msg: Survey):
        if player.phase != "survey":
            return
        player.survey_answers = dict(msg.answers)
        player.completion_code = secrets.token_hex(4)
        player.phase = "done"
        if self.config.replay_dir:
            path = Path(self.config.replay_dir) / "surveys.jsonl"
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({
                    "player": player.pseudonym,
                    "answers": player.survey_answers,
                    "bonus_usd_total": player.bonus_total,
                }) + "\n")
        player.send(Survey(complete=True, completion_code=player.completion_code))


def create_app(config: SessionConfig | None = None) -> FastAPI:
    app = FastAPI(title="gatherbuild server")
    session = Session(config or SessionConfig())
    app.state.session = session

    @app.get("/health")
    async def health():
        return {"ok": True, "players": len(session.players)}

    @app.get("/", response_class=HTMLResponse)
    async def index():
        return (STATIC_DIR / "index.html").read_text()

    @app.get("/tutorial", response_class=HTMLResponse)
    async def tutorial():
        name = "tutorial_qualification.html" if session.config.qualification else "tutorial.html"
        return (STATIC_DIR / name).read_text()

    @app.get("/survey", response_class=HTMLResponse)
    async def survey_page():
        return (STATIC_DIR / "survey.html").read_text()

    @app.websocket("/ws")
    async def ws_endpoint(websocket: WebSocket):
        await websocket.accept()
        player = None
        pump = None
        try:
            msg = decode(await websocket.receive_text())
            if not isinstance(msg, Hello):
                await websocket.close(code=4400, reason="expected hello")
                return
            player = await session.on_hello(msg.token)
            old_pump = getattr(player, "pump_task", None)
            if old_pump is not None:
                old_pump.cancel()

            async def pump_outbox():
                while True:
                    out = await player.outbox.get()
                    await websocket.send_text(encode(out))

            pump = asyncio.create_task(pump_outbox())
            player.pump_task = pump
            while True:
                msg = decode(await websocket.receive_text())
                if isinstance(msg, Action):
                    session.handle_action(player, msg)
                elif isinstance(msg, Survey):
                    session.handle_survey(player, msg)
                elif isinstance(msg, Hello):
                    pass        # already attached
                else:
                    raise ProtocolError(f"unexpected client message {msg.TYPE}")
        except WebSocketDisconnect:
            pass
        except ProtocolError as err:
            try:
                await websocket.close(code=4400, reason=str(err)[:110])
            except RuntimeError:
                pass
        finally:
            if player is not None:
                player.connected = False
            if pump is not None:
                pump.cancel()

    return app
