/** Service client plus the debounced, latest-wins diagnose scheduler.
 *
 * Toggling symptoms fires a live diagnosis after a short debounce; a
 * newer toggle aborts/supersedes the in-flight request, and responses
 * carry the request id so the reducer can discard anything stale. */

import type { ApiErrorBody, DiagnosisReport, SkinReport } from "./types.js";

export const DEBOUNCE_MS = 150;

export type FetchLike = (
  input: string,
  init?: RequestInit,
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly body: ApiErrorBody,
  ) {
    super(body.message);
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let body: ApiErrorBody;
  try {
    body = (await res.json()) as ApiErrorBody;
  } catch {
    body = { code: "unknown", message: `HTTP ${res.status}`, fields: [] };
  }
  return new ApiError(res.status, body);
}

export interface Client {
  listSymptoms(): Promise<string[]>;
  diagnose(symptoms: string[], k?: number): Promise<DiagnosisReport>;
  classifySkin(body: Uint8Array): Promise<SkinReport>;
  lastFingerprint(): string | null;
}

export function createClient(baseUrl = "", fetchImpl?: FetchLike): Client {
  const doFetch: FetchLike = fetchImpl ?? ((u, i) => fetch(u, i));
  let fingerprint: string | null = null;

  const remember = (res: Response) => {
    const fp = res.headers.get("X-Model-Fingerprint");
    if (fp) fingerprint = fp;
    return res;
  };

  return {
    async listSymptoms() {
      const res = remember(await doFetch(`${baseUrl}/api/symptoms`));
      if (!res.ok) throw await parseError(res);
      const body = (await res.json()) as { symptoms: string[] };
      return body.symptoms;
    },
    async diagnose(symptoms, k = 5) {
      const res = remember(
        await doFetch(`${baseUrl}/api/diagnose`, {
          method: "POST",
          headers: { "content-type": "application/json" },
          body: JSON.stringify({ symptoms, k }),
        }),
      );
      if (!res.ok) throw await parseError(res);
      return (await res.json()) as DiagnosisReport;
    },
    async classifySkin(body) {
      const res = remember(
        await doFetch(`${baseUrl}/api/skin`, {
          method: "POST",
          headers: { "content-type": "application/octet-stream" },
          body: body as unknown as BodyInit,
        }),
      );
      if (!res.ok) throw await parseError(res);
      return (await res.json()) as SkinReport;
    },
    lastFingerprint: () => fingerprint,
  };
}

export interface DiagnoseOutcome {
  requestId: number;
  report?: DiagnosisReport;
  error?: { message: string; offenders: string[] };
}

export interface DiagnoseScheduler {
  /** Debounce, supersede anything in flight, resolve with the outcome.
   * Returns the request id assigned to this scheduling. */
  schedule(symptoms: string[], onStart: (requestId: number) => void,
           onDone: (outcome: DiagnoseOutcome) => void): number;
  cancel(): void;
}

export function createDiagnoseScheduler(
  client: Pick<Client, "diagnose">,
  debounceMs: number = DEBOUNCE_MS,
  setTimeoutImpl: typeof setTimeout = setTimeout,
  clearTimeoutImpl: typeof clearTimeout = clearTimeout,
): DiagnoseScheduler {
  let lastId = 0;
  let timer: ReturnType<typeof setTimeout> | null = null;

  return {
    schedule(symptoms, onStart, onDone) {
      lastId += 1;
      const requestId = lastId;
      if (timer !== null) clearTimeoutImpl(timer);
      timer = setTimeoutImpl(async () => {
        timer = null;
        if (requestId !== lastId) return; // superseded while queued
        onStart(requestId);
        try {
          const report = await client.diagnose(symptoms);
          if (requestId === lastId) onDone({ requestId, report });
        } catch (err) {
          if (requestId !== lastId) return;
          if (err instanceof ApiError) {
            onDone({
              requestId,
              error: { message: err.body.message, offenders: err.body.fields },
            });
          } else {
            onDone({
              requestId,
              error: { message: String(err), offenders: [] },
            });
          }
        }
      }, debounceMs);
      return requestId;
    },
    cancel() {
      if (timer !== null) clearTimeoutImpl(timer);
      timer = null;
      lastId += 1;
    },
  };
}
