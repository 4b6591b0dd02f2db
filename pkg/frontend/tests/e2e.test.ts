/**
 * End-to-end: spawn the real python server with a short-session config and
 * complete the full participant flow with four scripted headless clients.
 */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { runGroup } from "../src/headless.js";

const PORT = 8765 + Math.floor(Math.random() * 300);
const URL = `ws://127.0.0.1:${PORT}/ws`;

let server: ChildProcess | null = null;

async function waitForHealth(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const res = await fetch(`http://127.0.0.1:${PORT}/health`);
      if (res.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((r) => setTimeout(r, 250));
  }
  throw new Error("server did not come up");
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "gb-e2e-"));
  const sessionConfig = join(dir, "session.yaml");
  // Four short episodes at a fast tick so the whole flow takes seconds.
  // Saez/camelback rate vectors are synthetic test values.
  writeFileSync(sessionConfig, [
    "episode: {episode_length: 60, tax_period: 6}",
    "tick_hz: 120",
    "tutorial_seconds: 0.2",
    "episodes_per_player: 4",
    "treatments: [free, us_federal, saez, camelback]",
    "saez_rates: [0.4, 0.35, 0.3, 0.25, 0.2, 0.15, 0.1]",
    "camelback_rates: [0.1, 0.3, 0.6, 0.6, 0.3, 0.2, 0.2]",
    `replay_dir: ${join(dir, "replays")}`,
    "seed: 11",
  ].join("\n"));
  server = spawn(
    "python3",
    ["-m", "gatherbuild.cli", "serve", "--host", "127.0.0.1",
     "--port", String(PORT), "--session-config", sessionConfig],
    { stdio: ["ignore", "pipe", "pipe"], cwd: join(__dirname, "..", "..") },
  );
  server.stderr?.on("data", (d) => process.stderr.write(d));
  await waitForHealth();
}, 60_000);

afterAll(() => {
  server?.kill("SIGTERM");
});

describe("full participant flow against a live server", () => {
  it("four scripted clients finish 4 episodes and the survey cleanly", async () => {
    const results = await runGroup(URL, 4);
    expect(results.length).toBe(4);
    for (const r of results) {
      expect(r.protocolErrors).toBe(0);
      expect(r.episodesCompleted).toBe(4);
      expect(r.finalPhase).toBe("done");
      expect(r.completionCode).toBeTruthy();
      expect(r.deltasSeen).toBeGreaterThanOrEqual(4 * 60);
      expect(r.bonusMismatches).toBe(0);   // HUD bonus == utility x 0.06 throughout
    }
    const codes = new Set(results.map((r) => r.completionCode));
    expect(codes.size).toBe(4);
  }, 120_000);
});
