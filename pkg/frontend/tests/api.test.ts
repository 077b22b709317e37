import { describe, expect, it } from "vitest";

import {
  ApiError,
  DiagnoseOutcome,
  createClient,
  createDiagnoseScheduler,
} from "../src/api.js";
import type { DiagnosisReport } from "../src/types.js";

function jsonResponse(body: unknown, status = 200, fingerprint = "fp-test") {
  return new Response(JSON.stringify(body), {
    status,
    headers: {
      "content-type": "application/json",
      "X-Model-Fingerprint": fingerprint,
    },
  });
}

function report(symptoms: string[]): DiagnosisReport {
  return { symptoms, model_fingerprint: "fp-test", entries: [] };
}

/** Deterministic manual timer queue standing in for setTimeout. */
function manualTimers() {
  let nextId = 1;
  const pending = new Map<number, () => void>();
  return {
    set: ((fn: () => void) => {
      const id = nextId++;
      pending.set(id, fn);
      return id;
    }) as unknown as typeof setTimeout,
    clear: ((id: number) => {
      pending.delete(id as number);
    }) as unknown as typeof clearTimeout,
    async flush() {
      const fns = [...pending.values()];
      pending.clear();
      for (const fn of fns) fn();
      await new Promise((r) => setTimeout(r, 0));
    },
  };
}

function deferred<T>() {
  let resolve!: (v: T) => void;
  let reject!: (e: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}

describe("client", () => {
  it("parses reports and remembers the fingerprint header", async () => {
    const client = createClient("", async () =>
      jsonResponse({ symptoms: ["a", "b"] }, 200, "fp-9"),
    );
    expect(await client.listSymptoms()).toEqual(["a", "b"]);
    expect(client.lastFingerprint()).toBe("fp-9");
  });

  it("raises ApiError with the service's code and fields", async () => {
    const client = createClient("", async () =>
      jsonResponse(
        { code: "unknown_symptoms", message: "unknown symptoms", fields: ["fevr"] },
        422,
      ),
    );
    await expect(client.diagnose(["fevr"])).rejects.toMatchObject({
      status: 422,
      body: { code: "unknown_symptoms", fields: ["fevr"] },
    });
  });

  it("posts raw bytes for skin classification", async () => {
    let seen: RequestInit | undefined;
    const client = createClient("", async (_url, init) => {
      seen = init;
      return jsonResponse({ model_fingerprint: "fp", classes: [] });
    });
    await client.classifySkin(new Uint8Array([1, 2, 3]));
    expect(seen?.method).toBe("POST");
    expect((seen?.headers as Record<string, string>)["content-type"]).toBe(
      "application/octet-stream",
    );
  });
});

describe("diagnose scheduler", () => {
  it("debounces: only the last scheduling inside the window fires", async () => {
    const timers = manualTimers();
    const calls: string[][] = [];
    const scheduler = createDiagnoseScheduler(
      { diagnose: async (s) => (calls.push(s), report(s)) },
      150,
      timers.set,
      timers.clear,
    );
    const outcomes: DiagnoseOutcome[] = [];
    scheduler.schedule(["a"], () => {}, (o) => outcomes.push(o));
    scheduler.schedule(["a", "b"], () => {}, (o) => outcomes.push(o));
    scheduler.schedule(["a", "b", "c"], () => {}, (o) => outcomes.push(o));
    await timers.flush();
    expect(calls).toEqual([["a", "b", "c"]]);
    expect(outcomes).toHaveLength(1);
    expect(outcomes[0]?.report?.symptoms).toEqual(["a", "b", "c"]);
  });

  it("latest wins when responses resolve out of order", async () => {
    const timers = manualTimers();
    const inflight: Array<{
      symptoms: string[];
      d: ReturnType<typeof deferred<DiagnosisReport>>;
    }> = [];
    const scheduler = createDiagnoseScheduler(
      {
        diagnose: (symptoms) => {
          const d = deferred<DiagnosisReport>();
          inflight.push({ symptoms, d });
          return d.promise;
        },
      },
      150,
      timers.set,
      timers.clear,
    );
    const outcomes: DiagnoseOutcome[] = [];
    const started: number[] = [];

    scheduler.schedule(["first"], (id) => started.push(id), (o) => outcomes.push(o));
    await timers.flush(); // request 1 now in flight
    scheduler.schedule(["second"], (id) => started.push(id), (o) => outcomes.push(o));
    await timers.flush(); // request 2 in flight

    // the stale response arrives *after* the newer one
    inflight[1]!.d.resolve(report(["second"]));
    await new Promise((r) => setTimeout(r, 0));
    inflight[0]!.d.resolve(report(["first"]));
    await new Promise((r) => setTimeout(r, 0));

    expect(started).toHaveLength(2);
    expect(outcomes).toHaveLength(1);
    expect(outcomes[0]?.report?.symptoms).toEqual(["second"]);
  });

  it("rapid toggling of 5 symptoms settles on the final selection", async () => {
    const timers = manualTimers();
    const calls: string[][] = [];
    const scheduler = createDiagnoseScheduler(
      { diagnose: async (s) => (calls.push(s), report(s)) },
      150,
      timers.set,
      timers.clear,
    );
    const outcomes: DiagnoseOutcome[] = [];
    const selection: string[] = [];
    for (const name of ["s1", "s2", "s3", "s4", "s5"]) {
      selection.push(name);
      scheduler.schedule([...selection], () => {}, (o) => outcomes.push(o));
      if (name === "s3") await timers.flush(); // mid-burst flush: one real request
    }
    await timers.flush();
    inflightSanity: {
      expect(calls).toEqual([["s1", "s2", "s3"], ["s1", "s2", "s3", "s4", "s5"]]);
    }
    // only the final selection's outcome survives
    expect(outcomes.at(-1)?.report?.symptoms).toEqual(["s1", "s2", "s3", "s4", "s5"]);
    const delivered = outcomes.filter((o) => o.report);
    expect(delivered.at(-1)?.requestId).toBe(5);
  });

  it("surfaces ApiError bodies as structured failures", async () => {
    const timers = manualTimers();
    const scheduler = createDiagnoseScheduler(
      {
        diagnose: async () => {
          throw new ApiError(422, {
            code: "unknown_symptoms",
            message: "unknown symptoms",
            fields: ["zzz"],
          });
        },
      },
      150,
      timers.set,
      timers.clear,
    );
    const outcomes: DiagnoseOutcome[] = [];
    scheduler.schedule(["zzz"], () => {}, (o) => outcomes.push(o));
    await timers.flush();
    expect(outcomes[0]?.error).toEqual({
      message: "unknown symptoms",
      offenders: ["zzz"],
    });
  });
});
