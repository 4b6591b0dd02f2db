import { describe, expect, it } from "vitest";

import {
  Message,
  ProtocolError,
  actionMessage,
  decode,
  encode,
  hello,
  surveyAnswers,
} from "../src/protocol.js";

const GOLDEN: Message[] = [
  hello("tok-1"),
  { type: "lobby", v: 1, phase: "waiting", waiting: 2, needed: 4, tutorial_seconds_left: 0 },
  {
    type: "episode_start", v: 1, episode_index: 0, agent_id: 3, rows: 25, cols: 25,
    water: [[12, 0], [12, 1]], sources: [[3, 3, 1]], building_skill: 2.22,
    collection_skill: 1.61, episode_length: 3000, tax_period: 300, tick_hz: 10,
    qualification: false,
  },
  {
    type: "state_delta", v: 1, t: 7, cells: [[3, 3, 0], [4, 4, 12]],
    agents: [[0, 1, 1], [1, 2, 2]],
    hud: { coin: 22.2, utility: 8.5, bonus_usd: 0.51 },
  },
  actionMessage("up"),
  actionMessage("build"),
  { type: "tax_update", v: 1, t: 300, rates: [0.1, 0.2], cutoffs: [3.23] },
  { type: "episode_end", v: 1, episode_index: 0, utility: 12, bonus_usd: 0.72, episodes_remaining: 3 },
  { type: "survey", v: 1, questions: ["Strategy?"], answers: {}, completion_code: "", complete: false },
  surveyAnswers({ "0": "built houses" }),
  { type: "survey", v: 1, questions: [], answers: {}, completion_code: "ab12", complete: true },
];

describe("protocol", () => {
  it("round-trips every message type identically", () => {
    for (const msg of GOLDEN) {
      expect(decode(encode(msg))).toEqual(msg);
    }
  });

  it("rejects unknown types", () => {
    expect(() => decode('{"type":"warp","v":1}')).toThrow(ProtocolError);
  });

  it("rejects wrong versions", () => {
    expect(() => decode('{"type":"hello","v":9,"token":"x"}')).toThrow(ProtocolError);
  });

  it("rejects malformed json", () => {
    expect(() => decode("{nope")).toThrow(ProtocolError);
  });

  it("rejects non-objects", () => {
    expect(() => decode("[1,2]")).toThrow(ProtocolError);
  });
});
