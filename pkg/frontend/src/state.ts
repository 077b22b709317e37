/** UI state machine. Every transition is a pure function of
 * (state, event), so the whole behavior is unit-testable without a
 * browser. Async plumbing lives in api.ts; the reducer only sees its
 * outcomes, tagged with request ids so stale responses are discarded
 * (latest wins). */

import type { DiagnosisReport, Mode, SkinClass } from "./types.js";

export interface UiState {
  mode: Mode;
  vocabulary: string[];
  vocabularyError: string | null;
  filter: string;
  selected: string[]; // always a subset of vocabulary, selection order
  report: DiagnosisReport | null;
  skinClasses: SkinClass[] | null;
  skinFingerprint: string | null;
  pendingRequestId: number | null;
  banner: string | null;
  fingerprint: string | null;
  fingerprintChanged: boolean;
}

export const initialState: UiState = {
  mode: "symptom",
  vocabulary: [],
  vocabularyError: null,
  filter: "",
  selected: [],
  report: null,
  skinClasses: null,
  skinFingerprint: null,
  pendingRequestId: null,
  banner: null,
  fingerprint: null,
  fingerprintChanged: false,
};

export type UiEvent =
  | { type: "vocabulary_loaded"; symptoms: string[] }
  | { type: "vocabulary_failed"; message: string }
  | { type: "filter_changed"; text: string }
  | { type: "mode_changed"; mode: Mode }
  | { type: "symptom_toggled"; name: string }
  | { type: "diagnose_started"; requestId: number }
  | { type: "diagnose_succeeded"; requestId: number; report: DiagnosisReport }
  | {
      type: "diagnose_failed";
      requestId: number;
      message: string;
      offenders: string[];
    }
  | { type: "skin_succeeded"; report: { model_fingerprint: string; classes: SkinClass[] } }
  | { type: "skin_failed"; message: string }
  | { type: "fingerprint_seen"; fingerprint: string };

export function reduce(state: UiState, event: UiEvent): UiState {
  switch (event.type) {
    case "vocabulary_loaded":
      return {
        ...state,
        vocabulary: event.symptoms,
        vocabularyError: null,
        // selection must stay a subset of the fetched list
        selected: state.selected.filter((s) => event.symptoms.includes(s)),
      };
    case "vocabulary_failed":
      return { ...state, vocabulary: [], vocabularyError: event.message };
    case "filter_changed":
      return { ...state, filter: event.text };
    case "mode_changed":
      return { ...state, mode: event.mode, banner: null };
    case "symptom_toggled": {
      if (!state.vocabulary.includes(event.name)) return state;
      const selected = state.selected.includes(event.name)
        ? state.selected.filter((s) => s !== event.name)
        : [...state.selected, event.name];
      // deselecting to zero clears the panel; no request will be fired
      const report = selected.length === 0 ? null : state.report;
      return { ...state, selected, report, banner: null };
    }
    case "diagnose_started":
      return { ...state, pendingRequestId: event.requestId };
    case "diagnose_succeeded": {
      if (event.requestId !== state.pendingRequestId) return state; // stale
      return {
        ...state,
        pendingRequestId: null,
        report: event.report,
        banner: null,
        ...trackFingerprint(state, event.report.model_fingerprint),
      };
    }
    case "diagnose_failed": {
      if (event.requestId !== state.pendingRequestId) return state; // stale
      const detail =
        event.offenders.length > 0
          ? `${event.message}: ${event.offenders.join(", ")}`
          : event.message;
      // selection is preserved on validation errors
      return { ...state, pendingRequestId: null, banner: detail };
    }
    case "skin_succeeded":
      return {
        ...state,
        skinClasses: event.report.classes,
        skinFingerprint: event.report.model_fingerprint,
        banner: null,
      };
    case "skin_failed":
      // previous rows stay untouched on a rejected upload
      return { ...state, banner: event.message };
    case "fingerprint_seen":
      return { ...state, ...trackFingerprint(state, event.fingerprint) };
  }
}

function trackFingerprint(
  state: UiState,
  fingerprint: string,
): Pick<UiState, "fingerprint" | "fingerprintChanged"> {
  return {
    fingerprint,
    fingerprintChanged:
      state.fingerprintChanged ||
      (state.fingerprint !== null && state.fingerprint !== fingerprint),
  };
}

/** Names shown in the symptom list under the current type-ahead filter. */
export function visibleSymptoms(state: UiState): string[] {
  const needle = state.filter.trim().toLowerCase();
  if (!needle) return state.vocabulary;
  return state.vocabulary.filter((s) => s.toLowerCase().includes(needle));
}
