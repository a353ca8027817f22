/**
 * Browser entry point.  Configuration is deliberately minimal: the service
 * base URL and the annotator id, read from query parameters with
 * localStorage fallback, e.g. index.html?server=http://localhost:8765&annotator=alice
 */

import { ApiClient } from "./api.js";
import { AnnotationController, INSTRUCTION_TEXT } from "./controller.js";
import { AnnotationView, queryElements } from "./dom.js";

function config(): { server: string; annotator: string } {
  const params = new URLSearchParams(window.location.search);
  const server =
    params.get("server") ??
    localStorage.getItem("pointlab.server") ??
    window.location.origin;
  let annotator =
    params.get("annotator") ?? localStorage.getItem("pointlab.annotator") ?? "";
  if (!annotator) {
    annotator = "web-" + Math.random().toString(36).slice(2, 8);
  }
  localStorage.setItem("pointlab.server", server);
  localStorage.setItem("pointlab.annotator", annotator);
  return { server, annotator };
}

function boot(): void {
  const { server, annotator } = config();
  const api = new ApiClient(server);
  const elements = queryElements(document);
  elements.instructions.textContent = INSTRUCTION_TEXT;

  const controller = new AnnotationController({
    api,
    annotator,
    now: () => performance.now(),
    schedule: (fn, ms) => {
      window.setTimeout(fn, ms);
    },
    render: (state) => view.render(state),
    instructionsSeen: () =>
      sessionStorage.getItem("pointlab.instructions") === "1",
    markInstructionsSeen: () =>
      sessionStorage.setItem("pointlab.instructions", "1"),
  });

  const view = new AnnotationView(elements, controller, (p) => api.resolve(p));
  view.bind(window);
  void controller.start();
}

boot();
