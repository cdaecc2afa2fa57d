/**
 * Drive a whole request file through an endpoint.
 *
 * Requests run under a bounded worker pool, but the output file lists one
 * response per valid request line in the input's order no matter which jobs
 * finished first. Completed jobs are appended to a checkpoint file as they
 * finish, so an interrupted batch rerun skips the users it already served.
 */

import * as fs from "node:fs";

import { Endpoint, PermanentEndpointError } from "./endpoint";
import {
  PredictionRequest,
  appendLine,
  formatResponseLine,
  jobKey,
  readCheckpoint,
  readRequestFile,
  writeLines,
} from "./interchange";
import { REQUESTED_COUNT, renderPrompt, DEFAULT_HISTORY_LIMIT } from "./prompts";
import { parseResponse } from "./parse";

export interface RunOptions {
  inputPath: string;
  outputPath: string;
  endpoint: Endpoint;
  /** Parallel requests in flight at once. */
  concurrency?: number;
  /** Extra attempts after the first failed one. */
  retries?: number;
  /** Base backoff; attempt n waits this long times 2^n. */
  retryDelayMs?: number;
  /** Where completed jobs are recorded; defaults next to the output file. */
  checkpointPath?: string;
  /** History names per prompt. */
  historyLimit?: number;
  log?: (message: string) => void;
}

export interface RunSummary {
  /** Response lines written to the output file. */
  completed: number;
  /** Jobs restored from the checkpoint instead of calling the endpoint. */
  fromCheckpoint: number;
  /** Malformed request lines skipped. */
  rejects: number;
}

/** The batch could not finish; completed jobs remain in the checkpoint. */
export class BatchError extends Error {
  constructor(
    message: string,
    public readonly failed: number,
    public readonly completed: number,
  ) {
    super(message);
  }
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

interface Job {
  index: number;
  request: PredictionRequest;
}

async function completeWithRetry(
  endpoint: Endpoint,
  job: Job,
  retries: number,
  retryDelayMs: number,
  historyLimit: number,
  log: (message: string) => void,
): Promise<string[]> {
  const prompt = renderPrompt(job.request.domain, job.request.history, historyLimit);
  for (let attempt = 0; ; attempt++) {
    try {
      const raw = await endpoint.complete(prompt, job.request);
      return parseResponse(raw, REQUESTED_COUNT);
    } catch (error) {
      const reason = error instanceof Error ? error.message : String(error);
      if (error instanceof PermanentEndpointError || attempt >= retries) {
        throw new Error(`user ${job.request.user_id} (${job.request.domain}): ${reason}`);
      }
      const delay = retryDelayMs * 2 ** attempt;
      log(`retrying user ${job.request.user_id} (${job.request.domain}) in ${delay}ms: ${reason}`);
      await sleep(delay);
    }
  }
}

export async function runBatch(options: RunOptions): Promise<RunSummary> {
  const concurrency = Math.max(1, options.concurrency ?? 4);
  const retries = Math.max(0, options.retries ?? 3);
  const retryDelayMs = Math.max(0, options.retryDelayMs ?? 500);
  const historyLimit = options.historyLimit ?? DEFAULT_HISTORY_LIMIT;
  const checkpointPath = options.checkpointPath ?? options.outputPath + ".checkpoint";
  const log = options.log ?? ((message: string) => process.stderr.write(message + "\n"));

  const { requests, rejects } = readRequestFile(options.inputPath);
  for (const reject of rejects) {
    log(`rejected request line ${reject.line_number}: ${reject.reason}`);
  }

  const done = readCheckpoint(checkpointPath);
  const results: (string[] | undefined)[] = new Array(requests.length);
  const pending: Job[] = [];
  let fromCheckpoint = 0;
  requests.forEach((request, index) => {
    const prior = done.get(jobKey(request.user_id, request.domain));
    if (prior !== undefined) {
      results[index] = prior;
      fromCheckpoint++;
    } else {
      pending.push({ index, request });
    }
  });

  let cursor = 0;
  let firstError: Error | null = null;
  let failed = 0;
  const worker = async () => {
    while (firstError === null) {
      const job = pending[cursor++];
      if (job === undefined) {
        return;
      }
      try {
        const names = await completeWithRetry(
          options.endpoint,
          job,
          retries,
          retryDelayMs,
          historyLimit,
          log,
        );
        results[job.index] = names;
        appendLine(
          checkpointPath,
          formatResponseLine({
            user_id: job.request.user_id,
            domain: job.request.domain,
            predictions: names,
          }),
        );
      } catch (error) {
        failed++;
        if (firstError === null) {
          firstError = error instanceof Error ? error : new Error(String(error));
        }
      }
    }
  };
  await Promise.all(
    Array.from({ length: Math.min(concurrency, Math.max(pending.length, 1)) }, worker),
  );
  if (firstError !== null) {
    const completed = results.filter((r) => r !== undefined).length;
    throw new BatchError(
      `batch stopped after ${failed} failed request(s); ` +
        `${completed} completed job(s) are checkpointed at ${checkpointPath}: ` +
        (firstError as Error).message,
      failed,
      completed,
    );
  }

  const lines = requests.map((request, index) =>
    formatResponseLine({
      user_id: request.user_id,
      domain: request.domain,
      predictions: results[index] ?? [],
    }),
  );
  writeLines(options.outputPath, lines);
  fs.rmSync(checkpointPath, { force: true });
  return { completed: lines.length, fromCheckpoint, rejects: rejects.length };
}
