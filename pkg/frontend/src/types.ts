/** Wire types mirroring the service's JSON bodies. */

export interface DiagnosisEntry {
  disease_id: number;
  name: string;
  /** decimal string with 6 places, e.g. "0.412345" */
  probability: string;
  treatment: string;
}

export interface DiagnosisReport {
  symptoms: string[];
  model_fingerprint: string;
  entries: DiagnosisEntry[];
}

export interface SkinClass {
  class_id: number;
  probability: string;
}

export interface SkinReport {
  model_fingerprint: string;
  classes: SkinClass[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  fields: string[];
}

export type Mode = "symptom" | "skin";
