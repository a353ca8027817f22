/**
 * DOM glue: renders ViewState into the page and routes inputs into the
 * controller.  Keyboard (Y/N/U) and the three buttons call the identical
 * controller entry point, differing only in the reported modality.
 *
 * The marker and lens are repositioned from the normalized assignment
 * coordinates every time the image loads or the window resizes, so the
 * overlay stays anchored to the same image point at any viewport size.
 */

import { Verdict } from "./api.js";
import { Modality, ViewState } from "./controller.js";
import { lensStyle, markerPosition } from "./geometry.js";

const LENS_DIAMETER_PX = 120;
const LENS_MAGNIFICATION = 2.5;

/** The controller surface the view needs; narrow so tests can stub it. */
export interface ViewController {
  answer(verdict: Verdict, modality: Modality): boolean;
  questionRendered(questionId: string): void;
}

export interface ViewElements {
  stage: HTMLElement;
  image: HTMLImageElement;
  marker: HTMLElement;
  lens: HTMLElement;
  prompt: HTMLElement;
  progress: HTMLElement;
  instructions: HTMLElement;
  notice: HTMLElement;
  errorBanner: HTMLElement;
  doneScreen: HTMLElement;
  loading: HTMLElement;
  buttons: { yes: HTMLButtonElement; no: HTMLButtonElement; unsure: HTMLButtonElement };
}

export function queryElements(doc: Document): ViewElements {
  const byId = <T extends HTMLElement>(id: string): T => {
    const el = doc.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    stage: byId("image-stage"),
    image: byId<HTMLImageElement>("question-image"),
    marker: byId("point-marker"),
    lens: byId("point-lens"),
    prompt: byId("question-prompt"),
    progress: byId("progress-line"),
    instructions: byId("instruction-banner"),
    notice: byId("notice-banner"),
    errorBanner: byId("error-banner"),
    doneScreen: byId("done-screen"),
    loading: byId("loading-screen"),
    buttons: {
      yes: byId<HTMLButtonElement>("btn-yes"),
      no: byId<HTMLButtonElement>("btn-no"),
      unsure: byId<HTMLButtonElement>("btn-unsure"),
    },
  };
}

const KEY_TO_VERDICT: Record<string, Verdict> = {
  y: "YES",
  n: "NO",
  u: "UNSURE",
};

export class AnnotationView {
  private readonly el: ViewElements;
  private readonly controller: ViewController;
  private readonly resolveUrl: (path: string) => string;
  private state: ViewState | null = null;
  private loadedSrc: string | null = null;

  constructor(
    elements: ViewElements,
    controller: ViewController,
    resolveUrl: (path: string) => string,
  ) {
    this.el = elements;
    this.controller = controller;
    this.resolveUrl = resolveUrl;
  }

  /** Attach all listeners; the returned function detaches them again. */
  bind(win: Window): () => void {
    const ac = new AbortController();
    const opts = { signal: ac.signal };

    const { yes, no, unsure } = this.el.buttons;
    yes.addEventListener("click", () => this.controller.answer("YES", "click"), opts);
    no.addEventListener("click", () => this.controller.answer("NO", "click"), opts);
    unsure.addEventListener(
      "click",
      () => this.controller.answer("UNSURE", "click"),
      opts,
    );

    win.addEventListener(
      "keydown",
      (ev: KeyboardEvent) => {
        if (ev.repeat || ev.ctrlKey || ev.metaKey || ev.altKey) return;
        const verdict = KEY_TO_VERDICT[ev.key.toLowerCase()];
        if (verdict === undefined) return;
        if (this.controller.answer(verdict, "key")) ev.preventDefault();
      },
      opts,
    );

    win.addEventListener("resize", () => this.positionOverlay(), opts);

    this.el.image.addEventListener(
      "load",
      () => {
        this.loadedSrc = this.el.image.src;
        this.positionOverlay();
        const a = this.state?.assignment;
        if (a) this.controller.questionRendered(a.question_id);
      },
      opts,
    );

    return () => ac.abort();
  }

  render(state: ViewState): void {
    this.state = state;

    show(this.el.loading, state.phase === "loading" || state.phase === "idle");
    show(this.el.doneScreen, state.phase === "done");
    show(this.el.instructions, state.showInstructions);
    setBanner(this.el.notice, state.notice);
    setBanner(
      this.el.errorBanner,
      state.errorBanner &&
        (state.retryInMs !== null
          ? `${state.errorBanner} (retrying in ${Math.round(state.retryInMs / 1000)}s)`
          : state.errorBanner),
    );

    const active = state.phase === "question";
    const stageVisible = active || state.phase === "submitting";
    show(this.el.stage, stageVisible);
    for (const btn of Object.values(this.el.buttons)) {
      btn.disabled = !active;
    }

    const a = state.assignment;
    if (a) {
      this.el.prompt.textContent = `Is the marked point on: ${a.class_name}?`;
      const src = this.resolveUrl(a.image_url);
      if (this.el.image.src !== src) {
        this.loadedSrc = null;
        this.el.image.src = src;
      } else if (this.loadedSrc === src) {
        // Image already in the element (same scene, next round): it is
        // painted, so render-complete is immediate.
        this.positionOverlay();
        this.controller.questionRendered(a.question_id);
      }
    } else {
      this.el.prompt.textContent = "";
    }

    this.el.progress.textContent = progressLine(state);
  }

  /** Recompute marker and lens placement from the current assignment. */
  positionOverlay(): void {
    const a = this.state?.assignment;
    if (!a) {
      this.el.marker.style.visibility = "hidden";
      this.el.lens.style.visibility = "hidden";
      return;
    }
    const rect = this.el.image.getBoundingClientRect();
    const box = { width: rect.width, height: rect.height };
    if (box.width <= 0 || box.height <= 0) return;

    const pos = markerPosition(a.x, a.y, box);
    this.el.marker.style.visibility = "visible";
    this.el.marker.style.left = `${pos.left}px`;
    this.el.marker.style.top = `${pos.top}px`;

    const lens = lensStyle(a.x, a.y, box, LENS_DIAMETER_PX, LENS_MAGNIFICATION);
    const ls = this.el.lens.style;
    ls.visibility = "visible";
    ls.left = `${lens.left}px`;
    ls.top = `${lens.top}px`;
    ls.width = `${lens.diameter}px`;
    ls.height = `${lens.diameter}px`;
    ls.backgroundImage = `url("${this.el.image.src}")`;
    ls.backgroundSize = `${lens.bgWidth}px ${lens.bgHeight}px`;
    ls.backgroundPosition = `${lens.bgLeft}px ${lens.bgTop}px`;
  }
}

function progressLine(state: ViewState): string {
  const mine = `${state.answeredHere} answered this session`;
  if (!state.progress) return mine;
  const p = state.progress;
  return `${p.answered} / ${p.questions_total} campaign answers · ${mine}`;
}

function show(el: HTMLElement, visible: boolean): void {
  el.hidden = !visible;
}

function setBanner(el: HTMLElement, text: string | null | undefined): void {
  if (text) {
    el.textContent = text;
    el.hidden = false;
  } else {
    el.hidden = true;
  }
}
