/**
 * Immediate-mode canvas rendering: the full grid and HUD are redrawn each
 * tick (10 Hz full redraws are well within budget and keep delta handling
 * trivial).
 */

import { CELL_HOUSE_BASE, CELL_STONE, CELL_WOOD } from "./protocol.js";
import { ClientView } from "./state.js";

/** Agent colors in ascending building-skill order. */
export const SKILL_COLORS = ["#1f3b8f", "#4aa3df", "#f2c14e", "#e8732a"];

export const WATER_COLOR = "#1d6fa5";
export const WOOD_COLOR = "#2e8b57";
export const STONE_COLOR = "#8a8d91";
export const EMPTY_COLOR = "#e9e4d0";

/**
 * Color per agent id: ids are ranked by their building skill so the
 * dark-blue..orange convention always tracks low..high skill.
 */
export function agentColors(buildingSkills: number[]): string[] {
  const order = buildingSkills
    .map((skill, id) => ({ skill, id }))
    .sort((a, b) => a.skill - b.skill || a.id - b.id);
  const colors = new Array<string>(buildingSkills.length);
  order.forEach((entry, rank) => {
    colors[entry.id] = SKILL_COLORS[rank % SKILL_COLORS.length];
  });
  return colors;
}

export function cellColor(code: number): string {
  if (code === CELL_WOOD) return WOOD_COLOR;
  if (code === CELL_STONE) return STONE_COLOR;
  return EMPTY_COLOR;
}

export function houseOwner(code: number): number | null {
  return code >= CELL_HOUSE_BASE ? code - CELL_HOUSE_BASE : null;
}

export interface HudLine {
  label: string;
  value: string;
}

/** HUD lines in display order; values are the server's, formatted only. */
export function hudLines(view: ClientView): HudLine[] {
  const hud = view.hud;
  const lines: HudLine[] = [];
  const num = (x: number | undefined, digits = 2) =>
    x === undefined ? "-" : x.toFixed(digits);
  lines.push({ label: "Coin", value: num(hud.coin) });
  lines.push({ label: "Wood / Stone", value: `${hud.wood ?? "-"} / ${hud.stone ?? "-"}` });
  lines.push({ label: "Houses built", value: `${hud.houses_built ?? "-"}` });
  lines.push({ label: "Labor", value: num(hud.labor) });
  lines.push({ label: "Utility", value: num(hud.utility) });
  lines.push({ label: "Bonus (USD)", value: num(hud.bonus_usd) });
  lines.push({ label: "Last coin change", value: num(hud.last_coin_change) });
  lines.push({
    label: "Time left",
    value: hud.remaining_seconds === undefined ? "-" : `${hud.remaining_seconds.toFixed(1)}s`,
  });
  lines.push({ label: "Period ticks left", value: `${hud.period_ticks_left ?? "-"}` });
  if (hud.marginal_rate !== undefined) {
    lines.push({ label: "Marginal tax rate", value: `${(hud.marginal_rate * 100).toFixed(0)}%` });
  }
  if (hud.profitable_houses_left !== undefined) {
    lines.push({ label: "Profitable houses left", value: `${hud.profitable_houses_left}` });
  }
  return lines;
}

/** Index of the active bracket given period income; -1 without data. */
export function activeBracket(cutoffs: number[] | null, periodIncome: number): number {
  if (!cutoffs) return -1;
  let bracket = 0;
  for (const cutoff of cutoffs) {
    if (periodIncome >= cutoff) bracket += 1;
  }
  return bracket;
}

export class CanvasRenderer {
  private ctx: CanvasRenderingContext2D;
  private skillColorCache: string[] | null = null;

  constructor(private canvas: HTMLCanvasElement, private cellPx = 20) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("canvas 2d context unavailable");
    this.ctx = ctx;
  }

  render(view: ClientView, agentSkills: number[] | null) {
    const ep = view.episode;
    if (!ep) return;
    const { rows, cols } = ep;
    this.canvas.width = cols * this.cellPx;
    this.canvas.height = rows * this.cellPx;
    const ctx = this.ctx;
    ctx.fillStyle = EMPTY_COLOR;
    ctx.fillRect(0, 0, this.canvas.width, this.canvas.height);

    for (const [r, c] of ep.water) {
      this.fillCell(r, c, WATER_COLOR);
    }
    const colors = agentSkills
      ? (this.skillColorCache ??= agentColors(agentSkills))
      : SKILL_COLORS;
    for (let r = 0; r < rows; r++) {
      for (let c = 0; c < cols; c++) {
        const code = view.cells[r * cols + c];
        if (code === 0) continue;
        const owner = houseOwner(code);
        if (owner !== null) {
          this.fillCell(r, c, colors[owner % colors.length]);
          this.markHouse(r, c);
        } else {
          this.fillCell(r, c, cellColor(code));
        }
      }
    }
    for (const agent of view.agents) {
      this.fillAgent(agent.row, agent.col, colors[agent.id % colors.length]);
    }
  }

  private fillCell(r: number, c: number, color: string) {
    this.ctx.fillStyle = color;
    this.ctx.fillRect(c * this.cellPx, r * this.cellPx, this.cellPx - 1, this.cellPx - 1);
  }

  private markHouse(r: number, c: number) {
    this.ctx.strokeStyle = "#3b2a18";
    this.ctx.strokeRect(
      c * this.cellPx + 3, r * this.cellPx + 3, this.cellPx - 7, this.cellPx - 7,
    );
  }

  private fillAgent(r: number, c: number, color: string) {
    const cx = c * this.cellPx + this.cellPx / 2;
    const cy = r * this.cellPx + this.cellPx / 2;
    this.ctx.fillStyle = color;
    this.ctx.beginPath();
    this.ctx.arc(cx, cy, this.cellPx * 0.38, 0, Math.PI * 2);
    this.ctx.fill();
    this.ctx.strokeStyle = "#222";
    this.ctx.stroke();
  }
}
