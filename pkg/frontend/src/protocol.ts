/**
 * Wire protocol shared with the server: versioned JSON text messages over a
 * websocket. Cell codes in state deltas: 0 empty, 1 wood, 2 stone,
 * 10+owner for houses.
 */

export const PROTOCOL_VERSION = 1;

export const CELL_EMPTY = 0;
export const CELL_WOOD = 1;
export const CELL_STONE = 2;
export const CELL_HOUSE_BASE = 10;

export type PlayerAction = "noop" | "up" | "down" | "left" | "right" | "build";

export interface Hello {
  type: "hello";
  v: number;
  token: string;
}

export interface Lobby {
  type: "lobby";
  v: number;
  phase: "tutorial" | "waiting" | "playing" | "survey" | "done";
  waiting: number;
  needed: number;
  tutorial_seconds_left: number;
}

export interface EpisodeStart {
  type: "episode_start";
  v: number;
  episode_index: number;
  agent_id: number;
  rows: number;
  cols: number;
  water: [number, number][];
  sources: [number, number, number][];
  building_skill: number;
  collection_skill: number;
  episode_length: number;
  tax_period: number;
  tick_hz: number;
  qualification: boolean;
}

export interface Hud {
  coin?: number;
  wood?: number;
  stone?: number;
  labor?: number;
  houses_built?: number;
  utility?: number;
  bonus_usd?: number;
  last_coin_change?: number;
  remaining_ticks?: number;
  remaining_seconds?: number;
  period_ticks_left?: number;
  tax_rates?: number[];
  marginal_rate?: number;
  profitable_houses_left?: number;
}

export interface StateDelta {
  type: "state_delta";
  v: number;
  t: number;
  cells: [number, number, number][];
  agents: [number, number, number][];
  hud: Hud;
}

export interface ActionMsg {
  type: "action";
  v: number;
  action: PlayerAction;
}

export interface TaxUpdate {
  type: "tax_update";
  v: number;
  t: number;
  rates: number[];
  cutoffs: number[];
}

export interface EpisodeEnd {
  type: "episode_end";
  v: number;
  episode_index: number;
  utility: number;
  bonus_usd: number;
  episodes_remaining: number;
}

export interface Survey {
  type: "survey";
  v: number;
  questions: string[];
  answers: Record<string, string>;
  completion_code: string;
  complete: boolean;
}

export type ServerMessage = Lobby | EpisodeStart | StateDelta | TaxUpdate | EpisodeEnd | Survey;
export type ClientMessage = Hello | ActionMsg | Survey;
export type Message = ServerMessage | ClientMessage;

const MESSAGE_TYPES = new Set([
  "hello", "lobby", "episode_start", "state_delta", "action", "tax_update",
  "episode_end", "survey",
]);

export class ProtocolError extends Error {}

export function encode(msg: Message): string {
  if (!MESSAGE_TYPES.has(msg.type)) {
    throw new ProtocolError(`not a protocol message: ${(msg as { type: string }).type}`);
  }
  return JSON.stringify({ ...msg, v: PROTOCOL_VERSION });
}

export function decode(text: string): Message {
  let raw: unknown;
  try {
    raw = JSON.parse(text);
  } catch (err) {
    throw new ProtocolError(`malformed message: ${err}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new ProtocolError("message must be an object");
  }
  const msg = raw as Record<string, unknown>;
  if (typeof msg.type !== "string" || !MESSAGE_TYPES.has(msg.type)) {
    throw new ProtocolError(`unknown message type ${JSON.stringify(msg.type)}`);
  }
  if (msg.v !== PROTOCOL_VERSION) {
    throw new ProtocolError(`unsupported protocol version ${JSON.stringify(msg.v)}`);
  }
  return raw as Message;
}

export function hello(token: string): Hello {
  return { type: "hello", v: PROTOCOL_VERSION, token };
}

export function actionMessage(action: PlayerAction): ActionMsg {
  return { type: "action", v: PROTOCOL_VERSION, action };
}

export function surveyAnswers(answers: Record<string, string>): Survey {
  return {
    type: "survey", v: PROTOCOL_VERSION, questions: [], answers,
    completion_code: "", complete: false,
  };
}
