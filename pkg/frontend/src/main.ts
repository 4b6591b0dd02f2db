/** Browser entry point: socket, keyboard, canvas, and phase screens. */

import { GameClient } from "./client.js";
import { CanvasRenderer, activeBracket, hudLines } from "./render.js";
import { ClientView } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function wsUrl(): string {
  const proto = location.protocol === "https:" ? "wss" : "ws";
  return `${proto}://${location.host}/ws`;
}

function main() {
  const params = new URLSearchParams(location.search);
  const token =
    params.get("token") ?? `anon-${Math.random().toString(36).slice(2, 10)}`;

  const canvas = el<HTMLCanvasElement>("grid");
  const renderer = new CanvasRenderer(canvas);
  const hudBox = el<HTMLDivElement>("hud");
  const phaseBox = el<HTMLDivElement>("phase");
  const taxBox = el<HTMLDivElement>("tax");
  const banner = el<HTMLDivElement>("banner");

  const socket = new WebSocket(wsUrl());
  const client = new GameClient(
    { send: (d) => socket.send(d), close: () => socket.close() },
    token,
    {
      onView: (view) => render(view),
      onProtocolError: (err) => {
        banner.textContent = `Connection problem: ${err.message}`;
        banner.style.display = "block";
      },
    },
  );

  socket.onopen = () => client.greet();
  socket.onmessage = (ev) => client.handleRaw(String(ev.data));
  socket.onclose = () => {
    banner.textContent = "Disconnected. Reload to reconnect; your seat is kept.";
    banner.style.display = "block";
  };

  window.addEventListener("keydown", (ev) => {
    if (client.keydown(ev.code)) ev.preventDefault();
  });

  el<HTMLButtonElement>("survey-submit").addEventListener("click", () => {
    const answers: Record<string, string> = {};
    document.querySelectorAll<HTMLTextAreaElement>(".survey-answer").forEach(
      (area, i) => { answers[String(i)] = area.value; },
    );
    client.submitSurvey(answers);
  });

  function render(view: ClientView) {
    const show = (id: string, on: boolean) => {
      el<HTMLDivElement>(id).style.display = on ? "block" : "none";
    };
    show("screen-tutorial", view.phase === "tutorial");
    show("screen-lobby", view.phase === "lobby");
    show("screen-play", view.phase === "playing");
    show("screen-survey", view.phase === "survey");
    show("screen-done", view.phase === "done");
    phaseBox.textContent = view.phase;

    if (view.phase === "tutorial") {
      el<HTMLSpanElement>("tutorial-left").textContent =
        `${Math.ceil(view.tutorialSecondsLeft)}`;
    } else if (view.phase === "lobby") {
      el<HTMLSpanElement>("lobby-count").textContent =
        `${view.lobbyWaiting} / ${view.lobbyNeeded}`;
      if (view.lastEpisode) {
        el<HTMLSpanElement>("last-bonus").textContent =
          view.lastEpisode.bonus_usd.toFixed(2);
      }
    } else if (view.phase === "playing") {
      renderer.render(view, null);
      hudBox.innerHTML = hudLines(view)
        .map((l) => `<div><span>${l.label}</span><b>${l.value}</b></div>`)
        .join("");
      if (view.taxRates && view.hud.tax_rates) {
        const bracket = activeBracket(view.taxCutoffs, 0);
        taxBox.innerHTML =
          "<b>Tax schedule</b> " +
          view.taxRates
            .map((r, i) => {
              const active = view.hud.marginal_rate === r && i >= 0;
              const pct = `${Math.round(r * 100)}%`;
              return active ? `<u>${pct}</u>` : pct;
            })
            .join(" | ") + (bracket >= 0 ? "" : "");
      } else {
        taxBox.textContent = "";
      }
    } else if (view.phase === "survey") {
      const list = el<HTMLDivElement>("survey-questions");
      if (list.childElementCount === 0) {
        list.innerHTML = view.surveyQuestions
          .map((q) => `<p>${q}</p><textarea class="survey-answer"></textarea>`)
          .join("");
      }
    } else if (view.phase === "done") {
      el<HTMLSpanElement>("completion-code").textContent =
        view.completionCode ?? "";
    }
  }
}

main();
