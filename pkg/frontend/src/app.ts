/** DOM bootstrap: wires events through the reducer and repaints. All
 * logic lives in state.ts / api.ts / render.ts; this file only touches
 * the document. */

import { createClient, createDiagnoseScheduler } from "./api.js";
import { initialState, reduce, UiEvent, UiState } from "./state.js";
import {
  renderBanner,
  renderDiagnosisPanel,
  renderFingerprint,
  renderSkinPanel,
  renderSymptomList,
} from "./render.js";

const client = createClient();
const scheduler = createDiagnoseScheduler(client);

let state: UiState = initialState;

function dispatch(event: UiEvent): void {
  state = reduce(state, event);
  paint();
}

function byId(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

function paint(): void {
  byId("banner").innerHTML = renderBanner(state);
  byId("symptoms").innerHTML = renderSymptomList(state);
  byId("diagnosis").innerHTML = renderDiagnosisPanel(state);
  byId("skin").innerHTML = renderSkinPanel(state);
  byId("fingerprint").innerHTML = renderFingerprint(state);
  byId("symptom-mode").hidden = state.mode !== "symptom";
  byId("skin-mode").hidden = state.mode !== "skin";
  const fp = client.lastFingerprint();
  if (fp && fp !== state.fingerprint) {
    dispatch({ type: "fingerprint_seen", fingerprint: fp });
  }
}

function requestDiagnosis(): void {
  if (state.selected.length === 0) {
    scheduler.cancel();
    return;
  }
  scheduler.schedule(
    [...state.selected],
    (requestId) => dispatch({ type: "diagnose_started", requestId }),
    (outcome) => {
      if (outcome.report) {
        dispatch({
          type: "diagnose_succeeded",
          requestId: outcome.requestId,
          report: outcome.report,
        });
      } else if (outcome.error) {
        dispatch({
          type: "diagnose_failed",
          requestId: outcome.requestId,
          message: outcome.error.message,
          offenders: outcome.error.offenders,
        });
      }
    },
  );
}

async function loadVocabulary(): Promise<void> {
  try {
    const symptoms = await client.listSymptoms();
    dispatch({ type: "vocabulary_loaded", symptoms });
  } catch (err) {
    dispatch({
      type: "vocabulary_failed",
      message: `could not load symptoms (${String(err)})`,
    });
  }
}

export function start(): void {
  byId("filter").addEventListener("input", (ev) => {
    dispatch({
      type: "filter_changed",
      text: (ev.target as HTMLInputElement).value,
    });
  });

  byId("symptoms").addEventListener("change", (ev) => {
    const target = ev.target as HTMLElement;
    const name = target.getAttribute("data-symptom");
    if (!name) return;
    dispatch({ type: "symptom_toggled", name });
    requestDiagnosis();
  });

  byId("banner").addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.getAttribute("data-action") === "retry-vocabulary") {
      void loadVocabulary();
    }
  });

  for (const mode of ["symptom", "skin"] as const) {
    byId(`tab-${mode}`).addEventListener("click", () => {
      dispatch({ type: "mode_changed", mode });
    });
  }

  byId("skin-file").addEventListener("change", async (ev) => {
    const input = ev.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const bytes = new Uint8Array(await file.arrayBuffer());
    try {
      const report = await client.classifySkin(bytes);
      dispatch({ type: "skin_succeeded", report });
    } catch (err) {
      dispatch({
        type: "skin_failed",
        message: err instanceof Error ? err.message : String(err),
      });
    }
  });

  void loadVocabulary();
  paint();
}

start();
