/**
 * Client-side view state. Strictly server-authoritative: every economic
 * value shown (coin, labor, bonus, rates) is copied verbatim from server
 * messages; the client never computes or predicts any of them.
 */

import {
  CELL_EMPTY,
  EpisodeEnd,
  EpisodeStart,
  Hud,
  Lobby,
  Message,
  ProtocolError,
  ServerMessage,
  StateDelta,
  Survey,
  TaxUpdate,
} from "./protocol.js";

export type Phase = "tutorial" | "lobby" | "playing" | "survey" | "done";

export interface AgentPose {
  id: number;
  row: number;
  col: number;
}

export interface ClientView {
  phase: Phase;
  tutorialSecondsLeft: number;
  lobbyWaiting: number;
  lobbyNeeded: number;
  episode: EpisodeStart | null;
  episodesCompleted: number;
  /** dense grid of cell codes, rows*cols, rebuilt from deltas */
  cells: Int16Array;
  agents: AgentPose[];
  hud: Hud;
  taxRates: number[] | null;
  taxCutoffs: number[] | null;
  lastEpisode: EpisodeEnd | null;
  surveyQuestions: string[];
  completionCode: string | null;
  tick: number;
}

export function initialView(): ClientView {
  return {
    phase: "tutorial",
    tutorialSecondsLeft: 0,
    lobbyWaiting: 0,
    lobbyNeeded: 4,
    episode: null,
    episodesCompleted: 0,
    cells: new Int16Array(0),
    agents: [],
    hud: {},
    taxRates: null,
    taxCutoffs: null,
    lastEpisode: null,
    surveyQuestions: [],
    completionCode: null,
    tick: 0,
  };
}

function applyLobby(view: ClientView, msg: Lobby) {
  view.tutorialSecondsLeft = msg.tutorial_seconds_left;
  view.lobbyWaiting = msg.waiting;
  view.lobbyNeeded = msg.needed;
  if (msg.phase === "tutorial") view.phase = "tutorial";
  else if (msg.phase === "waiting") view.phase = "lobby";
}

function applyEpisodeStart(view: ClientView, msg: EpisodeStart) {
  view.phase = "playing";
  view.episode = msg;
  view.cells = new Int16Array(msg.rows * msg.cols).fill(CELL_EMPTY);
  view.agents = [];
  view.hud = {};
  view.taxRates = null;
  view.taxCutoffs = null;
  view.tick = 0;
}

function applyDelta(view: ClientView, msg: StateDelta) {
  if (!view.episode) return;
  const cols = view.episode.cols;
  for (const [r, c, code] of msg.cells) {
    view.cells[r * cols + c] = code;
  }
  view.agents = msg.agents.map(([id, row, col]) => ({ id, row, col }));
  if (Object.keys(msg.hud).length > 0) {
    view.hud = msg.hud;
  }
  view.tick = msg.t;
}

function applyTaxUpdate(view: ClientView, msg: TaxUpdate) {
  view.taxRates = msg.rates;
  view.taxCutoffs = msg.cutoffs;
}

function applyEpisodeEnd(view: ClientView, msg: EpisodeEnd) {
  view.lastEpisode = msg;
  view.episodesCompleted += 1;
  view.phase = msg.episodes_remaining > 0 ? "lobby" : "survey";
}

function applySurvey(view: ClientView, msg: Survey) {
  if (msg.complete) {
    view.completionCode = msg.completion_code;
    view.phase = "done";
  } else if (msg.questions.length > 0) {
    view.surveyQuestions = msg.questions;
    view.phase = "survey";
  }
}

/** Fold one server message into the view. Client messages are rejected. */
export function handleMessage(view: ClientView, msg: Message): ClientView {
  switch (msg.type) {
    case "lobby":
      applyLobby(view, msg);
      break;
    case "episode_start":
      applyEpisodeStart(view, msg);
      break;
    case "state_delta":
      applyDelta(view, msg as StateDelta);
      break;
    case "tax_update":
      applyTaxUpdate(view, msg as TaxUpdate);
      break;
    case "episode_end":
      applyEpisodeEnd(view, msg as EpisodeEnd);
      break;
    case "survey":
      applySurvey(view, msg as Survey);
      break;
    default:
      throw new ProtocolError(`client cannot handle message type ${msg.type}`);
  }
  return view;
}

export function isServerMessage(msg: Message): msg is ServerMessage {
  return msg.type !== "hello" && msg.type !== "action";
}
