/** Framework-free DOM rendering for the game client. */

import { GameApi, Role, SessionReport } from "./api.js";
import { GameSession, accuracy } from "./game.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function formatAccuracy(value: number | null): string {
  return value === null ? "–" : `${Math.round(value * 100)}%`;
}

export class GameView {
  private readonly session: GameSession;

  constructor(
    private readonly root: HTMLElement,
    private readonly api: GameApi,
  ) {
    this.session = new GameSession(api);
  }

  renderLobby(): void {
    this.root.replaceChildren();
    const lobby = el("div", "lobby");
    lobby.append(el("h1", undefined, "Reference game"));
    lobby.append(
      el(
        "p",
        undefined,
        "Guess which object the model is describing, or describe a target " +
          "for the model to guess.",
      ),
    );
    for (const [role, title] of [
      ["human_listener", "Play listener"],
      ["human_speaker", "Play speaker"],
    ] as [Role, string][]) {
      const button = el("button", "start", title);
      button.addEventListener("click", () => {
        void this.session
          .start(role)
          .then(() => this.renderRound())
          .catch((error) => this.renderError(error));
      });
      lobby.append(button);
    }
    this.root.append(lobby);
  }

  renderRound(): void {
    const state = this.session.state;
    if (state.phase === "finished") {
      this.renderFinished();
      return;
    }
    const round = state.round;
    if (!round) return;
    this.root.replaceChildren();

    const header = el("div", "header");
    header.append(
      el(
        "span",
        "progress",
        `Round ${round.round_index + 1} / ${round.n_rounds}`,
      ),
      el("span", "score", `Correct: ${state.correct} / ${state.completed}`),
    );
    this.root.append(header);

    if (round.role === "human_listener" && round.utterance) {
      this.root.append(el("p", "utterance", `“${round.utterance}”`));
    } else if (round.role === "human_speaker") {
      this.root.append(
        el(
          "p",
          "prompt",
          "Describe the highlighted object so the model picks it.",
        ),
      );
    }

    const board = el("div", "board");
    round.objects.forEach((object) => {
      const card = el("div", "card");
      const img = el("img");
      img.src = object.image_url;
      img.alt = object.label;
      card.append(img, el("div", "label", object.label));
      if (round.role === "human_listener") {
        card.classList.add("clickable");
        card.addEventListener("click", () => {
          void this.session
            .choose(object.slot)
            .then(() => this.renderOutcome())
            .catch((error) => this.renderError(error));
        });
      }
      board.append(card);
    });
    this.root.append(board);

    if (round.role === "human_speaker") {
      const form = el("form", "speak");
      const input = el("input");
      input.type = "text";
      input.placeholder = "your description";
      const send = el("button", undefined, "Send");
      form.append(input, send);
      form.addEventListener("submit", (event) => {
        event.preventDefault();
        if (!input.value.trim()) return;
        void this.session
          .describe(input.value)
          .then(() => this.renderOutcome())
          .catch((error) => this.renderError(error));
      });
      this.root.append(form);
    }
  }

  private renderOutcome(): void {
    const outcome = this.session.state.lastOutcome;
    if (outcome) {
      const banner = el(
        "div",
        outcome.correct ? "outcome correct" : "outcome wrong",
        outcome.correct ? "Correct!" : "Not this time.",
      );
      this.root.prepend(banner);
      setTimeout(() => this.renderRound(), 600);
    } else {
      this.renderRound();
    }
  }

  private renderFinished(): void {
    const state = this.session.state;
    this.root.replaceChildren();
    this.root.append(el("h1", undefined, "Session complete"));
    this.root.append(
      el(
        "p",
        "final",
        `You got ${state.correct} of ${state.completed} rounds ` +
          `(${formatAccuracy(accuracy(state))}).`,
      ),
    );
    if (state.sessionId) {
      void this.api
        .sessionReport(state.sessionId)
        .then((report) => this.renderReport(report))
        .catch((error) => this.renderError(error));
    }
    const again = el("button", "start", "Play again");
    again.addEventListener("click", () => this.renderLobby());
    this.root.append(again);
  }

  private renderReport(report: SessionReport): void {
    const table = el("table", "report");
    const rows: [string, number | null, number][] = [
      ["overall", report.overall_accuracy, report.completed],
      ["hard", report.hard_accuracy, report.hard_count],
      ["easy", report.easy_accuracy, report.easy_count],
    ];
    for (const [name, value, count] of rows) {
      const tr = el("tr");
      tr.append(
        el("td", undefined, name),
        el("td", undefined, formatAccuracy(value)),
        el("td", undefined, `${count} rounds`),
      );
      table.append(tr);
    }
    this.root.append(table);
  }

  private renderError(error: unknown): void {
    const message = error instanceof Error ? error.message : String(error);
    this.root.prepend(el("div", "error", message));
  }
}
