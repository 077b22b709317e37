/** Pure view functions: UiState in, HTML strings out. app.ts injects
 * the strings into the DOM; tests assert on them directly. */

import { UiState, visibleSymptoms } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;");
}

export function renderBanner(state: UiState): string {
  if (state.fingerprintChanged) {
    return `<div class="banner notice">model changed mid-session (fingerprint ${escapeHtml(
      state.fingerprint ?? "?",
    ).slice(0, 12)}…) — results before and after are not comparable</div>`;
  }
  if (state.banner) {
    return `<div class="banner error">${escapeHtml(state.banner)}</div>`;
  }
  return "";
}

export function renderSymptomList(state: UiState): string {
  if (state.vocabularyError) {
    return `<div class="banner error">${escapeHtml(
      state.vocabularyError,
    )} <button data-action="retry-vocabulary">retry</button></div>`;
  }
  const items = visibleSymptoms(state)
    .map((name) => {
      const on = state.selected.includes(name);
      return (
        `<li><label><input type="checkbox" data-symptom="${escapeHtml(name)}"` +
        `${on ? " checked" : ""}> ${escapeHtml(name)}</label></li>`
      );
    })
    .join("");
  return `<ul class="symptom-list">${items}</ul>`;
}

/** Top-5 panel. Bars use the raw (unrenormalized) probabilities; a body
 * whose probabilities sum past 1.000001 is never displayed. */
export function renderDiagnosisPanel(state: UiState): string {
  if (state.selected.length === 0) {
    return `<p class="placeholder">select at least one symptom</p>`;
  }
  if (!state.report) {
    return state.pendingRequestId !== null
      ? `<p class="placeholder">diagnosing…</p>`
      : "";
  }
  const probs = state.report.entries.map((e) => Number(e.probability));
  const total = probs.reduce((a, b) => a + b, 0);
  if (total > 1.000001) {
    return `<div class="banner error">inconsistent probabilities from service (sum ${total.toFixed(
      6,
    )})</div>`;
  }
  const rows = state.report.entries
    .map((e, i) => {
      const pct = Math.max(0.5, (probs[i] ?? 0) * 100);
      const treatment = e.treatment
        ? `<details><summary>treatment</summary><p>${escapeHtml(
            e.treatment,
          )}</p></details>`
        : `<span class="no-treatment">no treatment on file</span>`;
      return (
        `<li class="diagnosis-row">` +
        `<span class="rank">${i + 1}.</span>` +
        `<span class="name">${escapeHtml(e.name)}</span>` +
        `<span class="bar"><span class="fill" style="width:${pct.toFixed(2)}%"></span></span>` +
        `<span class="prob">${escapeHtml(e.probability)}</span>` +
        treatment +
        `</li>`
      );
    })
    .join("");
  return `<ol class="diagnosis-panel">${rows}</ol>`;
}

export function renderSkinPanel(state: UiState): string {
  if (!state.skinClasses) {
    return `<p class="placeholder">upload a 32×32 P6 (binary PPM) image</p>`;
  }
  const rows = state.skinClasses
    .map(
      (c, i) =>
        `<li><span class="rank">${i + 1}.</span> class ${c.class_id}` +
        `<span class="bar"><span class="fill" style="width:${(
          Number(c.probability) * 100
        ).toFixed(2)}%"></span></span>` +
        `<span class="prob">${escapeHtml(c.probability)}</span></li>`,
    )
    .join("");
  return `<ol class="skin-panel">${rows}</ol>`;
}

export function renderFingerprint(state: UiState): string {
  if (!state.fingerprint) return "";
  return `<span class="fingerprint" title="${escapeHtml(state.fingerprint)}">model ${escapeHtml(
    state.fingerprint.slice(0, 12),
  )}…</span>`;
}
