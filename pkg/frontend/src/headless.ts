/**
 * Scripted headless client: completes the whole participant flow
 * (tutorial -> lobby -> episodes -> survey -> completion code) against a
 * live server, counting protocol errors and HUD consistency violations.
 * Used by the end-to-end test and runnable standalone.
 */

import WebSocket from "ws";

import { GameClient } from "./client.js";
import { Message, PlayerAction } from "./protocol.js";

const MOVES: PlayerAction[] = ["up", "down", "left", "right", "build"];

export interface ScriptedResult {
  token: string;
  protocolErrors: number;
  episodesCompleted: number;
  completionCode: string | null;
  deltasSeen: number;
  bonusMismatches: number;
  finalPhase: string;
}

export interface ScriptedOptions {
  timeoutMs?: number;
  bonusRate?: number;
}

export function runScriptedClient(
  url: string,
  token: string,
  opts: ScriptedOptions = {},
): Promise<ScriptedResult> {
  const timeoutMs = opts.timeoutMs ?? 120_000;
  const bonusRate = opts.bonusRate ?? 0.06;
  return new Promise((resolve, reject) => {
    const ws = new WebSocket(url);
    let deltas = 0;
    let bonusMismatches = 0;
    let step = 0;
    const client: GameClient = new GameClient(
      { send: (d) => ws.send(d), close: () => ws.close() },
      token,
      {
        onView: (view, msg: Message) => {
          if (msg.type === "state_delta") {
            deltas += 1;
            const { utility, bonus_usd } = view.hud;
            if (utility !== undefined && bonus_usd !== undefined) {
              if (Math.abs(bonus_usd - utility * bonusRate) > 1e-9) {
                bonusMismatches += 1;
              }
            }
            // Wander and build; the throttle sends it on the next delta.
            client.keydown(keyFor(MOVES[step % MOVES.length]));
            step += 1;
          } else if (msg.type === "survey" && view.phase === "survey") {
            client.submitSurvey({ "0": "scripted run", "1": "n/a", "2": "none" });
          } else if (view.phase === "done") {
            finish();
          }
        },
      },
    );

    const timer = setTimeout(() => {
      ws.close();
      reject(new Error(`scripted client ${token} timed out`));
    }, timeoutMs);

    function finish() {
      clearTimeout(timer);
      ws.close();
      resolve({
        token,
        protocolErrors: client.protocolErrors,
        episodesCompleted: client.view.episodesCompleted,
        completionCode: client.view.completionCode,
        deltasSeen: deltas,
        bonusMismatches,
        finalPhase: client.view.phase,
      });
    }

    ws.on("open", () => client.greet());
    ws.on("message", (data) => client.handleRaw(data.toString()));
    ws.on("error", (err) => {
      clearTimeout(timer);
      reject(err);
    });
  });
}

function keyFor(action: PlayerAction): string {
  switch (action) {
    case "up": return "ArrowUp";
    case "down": return "ArrowDown";
    case "left": return "ArrowLeft";
    case "right": return "ArrowRight";
    case "build": return "KeyB";
    default: return "Space";
  }
}

export async function runGroup(url: string, size = 4): Promise<ScriptedResult[]> {
  return Promise.all(
    Array.from({ length: size }, (_, i) => runScriptedClient(url, `headless-${i}`)),
  );
}

const invokedDirectly =
  typeof process !== "undefined" && process.argv[1]?.endsWith("headless.js");
if (invokedDirectly) {
  const url = process.env.GATHERBUILD_URL ?? "ws://127.0.0.1:8000/ws";
  runGroup(url)
    .then((results) => {
      for (const r of results) {
        console.log(
          `${r.token}: episodes=${r.episodesCompleted} code=${r.completionCode} ` +
          `protocolErrors=${r.protocolErrors} deltas=${r.deltasSeen}`,
        );
      }
      const bad = results.some((r) => r.protocolErrors > 0 || !r.completionCode);
      process.exit(bad ? 1 : 0);
    })
    .catch((err) => {
      console.error(err);
      process.exit(1);
    });
}
