// DOM wiring for the listening test: audio player, the five labeled score
// buttons, progress and error banners, and the completion screen.

import { MosApi } from "./api.js";
import { SCORE_LABELS, SessionController, startSession } from "./controller.js";

const ENFORCE_FULL_LISTEN = true;

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

function renderComplete(root: HTMLElement, controller: SessionController): void {
  root.replaceChildren();
  const box = el("div", "panel complete");
  box.appendChild(el("h2", undefined, "All done"));
  const { total } = controller.progress();
  box.appendChild(el("p", undefined,
    `You rated ${total} clips. Thank you for taking part.`));
  root.appendChild(box);
}

function renderClip(root: HTMLElement, api: MosApi, controller: SessionController): void {
  const clip = controller.current();
  if (clip === null) {
    renderComplete(root, controller);
    return;
  }
  root.replaceChildren();
  const panel = el("div", "panel");

  const { done, total } = controller.progress();
  panel.appendChild(el("div", "progress", `${done}/${total} rated`));
  panel.appendChild(el("h2", undefined, clip.name));
  panel.appendChild(el("p", "hint",
    "Listen to the clip, then rate its overall quality."));

  const audio = el("audio");
  audio.src = api.clipUrl(clip);
  audio.preload = "auto";
  // one full listen before scrubbing or scoring becomes available
  audio.controls = !ENFORCE_FULL_LISTEN;
  panel.appendChild(audio);

  const playBtn = el("button", "play", "Play clip");
  playBtn.addEventListener("click", () => {
    void audio.play();
    playBtn.disabled = true;
  });
  panel.appendChild(playBtn);

  const scoreRow = el("div", "scores");
  const scoreButtons: HTMLButtonElement[] = [];
  for (const [value, label] of SCORE_LABELS) {
    const btn = el("button", "score", `${value} - ${label}`);
    btn.disabled = ENFORCE_FULL_LISTEN;
    btn.addEventListener("click", () => {
      controller.selectScore(value);
      scoreButtons.forEach((b) => b.classList.remove("chosen"));
      btn.classList.add("chosen");
      submit.disabled = !controller.canSubmit();
    });
    scoreButtons.push(btn);
    scoreRow.appendChild(btn);
  }
  panel.appendChild(scoreRow);

  audio.addEventListener("ended", () => {
    controller.markListened();
    audio.controls = true; // replay allowed after the first complete listen
    playBtn.hidden = true;
    scoreButtons.forEach((b) => {
      b.disabled = false;
    });
    submit.disabled = !controller.canSubmit();
  });

  const submit = el("button", "submit", "Submit rating");
  submit.disabled = true;
  const errorBox = el("div", "error");
  errorBox.hidden = true;

  submit.addEventListener("click", () => {
    submit.disabled = true;
    void controller.submitAndAdvance().then((advanced) => {
      if (advanced) {
        renderClip(root, api, controller);
      } else {
        errorBox.textContent =
          `${controller.error() ?? "submission failed"} - your rating is kept, try again`;
        errorBox.hidden = false;
        submit.textContent = "Retry submission";
        submit.disabled = false;
      }
    });
  });
  panel.appendChild(submit);
  panel.appendChild(errorBox);
  root.appendChild(panel);
}

async function boot(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) return;
  const params = new URLSearchParams(window.location.search);
  const rater = params.get("rater") ?? `rater-${Math.random().toString(36).slice(2, 8)}`;
  const api = new MosApi("");
  try {
    const controller = await startSession(api, rater, {
      requireFullListen: ENFORCE_FULL_LISTEN,
    });
    renderClip(root, api, controller);
  } catch (err) {
    root.replaceChildren();
    const box = el("div", "panel error-panel");
    box.appendChild(el("h2", undefined, "Could not reach the listening test"));
    box.appendChild(el("p", undefined, err instanceof Error ? err.message : String(err)));
    const retry = el("button", "submit", "Retry");
    retry.addEventListener("click", () => void boot());
    box.appendChild(retry);
    root.appendChild(box);
  }
}

void boot();
