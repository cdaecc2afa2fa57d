/**
 * Command-line front end.
 *
 *   cli.js run --input requests.jsonl --output responses.jsonl \
 *          --endpoint mock: [--concurrency N] [--retries N] \
 *          [--retry-delay MS] [--checkpoint PATH] [--history-limit N]
 *   cli.js render --input requests.jsonl [--history-limit N]
 *
 * "run" executes the batch against the endpoint. "render" prints the prompt
 * each request would produce, one JSON object per line, without calling
 * anything.
 */

import { endpointFromSpec } from "./endpoint";
import { readRequestFile, stableLine } from "./interchange";
import { DEFAULT_HISTORY_LIMIT, renderPrompt } from "./prompts";
import { BatchError, runBatch } from "./runner";

const USAGE = `usage:
  cli.js run --input <requests.jsonl> --output <responses.jsonl> --endpoint <mock:|http(s)://...>
             [--concurrency N] [--retries N] [--retry-delay MS]
             [--checkpoint PATH] [--history-limit N]
  cli.js render --input <requests.jsonl> [--history-limit N]`;

interface Flags {
  [name: string]: string;
}

function parseFlags(argv: string[]): Flags {
  const flags: Flags = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) {
      throw new Error(`unexpected argument ${JSON.stringify(arg)}`);
    }
    const value = argv[i + 1];
    if (value === undefined || value.startsWith("--")) {
      throw new Error(`flag ${arg} needs a value`);
    }
    flags[arg.slice(2)] = value;
    i++;
  }
  return flags;
}

function required(flags: Flags, name: string): string {
  const value = flags[name];
  if (value === undefined) {
    throw new Error(`missing required flag --${name}`);
  }
  return value;
}

function numeric(flags: Flags, name: string, fallback: number): number {
  const value = flags[name];
  if (value === undefined) {
    return fallback;
  }
  const parsed = Number(value);
  if (!Number.isFinite(parsed) || parsed < 0) {
    throw new Error(`--${name} must be a nonnegative number, got ${JSON.stringify(value)}`);
  }
  return parsed;
}

async function commandRun(flags: Flags): Promise<void> {
  const summary = await runBatch({
    inputPath: required(flags, "input"),
    outputPath: required(flags, "output"),
    endpoint: endpointFromSpec(required(flags, "endpoint")),
    concurrency: numeric(flags, "concurrency", 4),
    retries: numeric(flags, "retries", 3),
    retryDelayMs: numeric(flags, "retry-delay", 500),
    checkpointPath: flags["checkpoint"],
    historyLimit: numeric(flags, "history-limit", DEFAULT_HISTORY_LIMIT),
  });
  process.stderr.write(
    `completed ${summary.completed} response(s) ` +
      `(${summary.fromCheckpoint} from checkpoint, ${summary.rejects} rejected line(s))\n`,
  );
}

function commandRender(flags: Flags): void {
  const historyLimit = numeric(flags, "history-limit", DEFAULT_HISTORY_LIMIT);
  const { requests, rejects } = readRequestFile(required(flags, "input"));
  for (const reject of rejects) {
    process.stderr.write(`rejected request line ${reject.line_number}: ${reject.reason}\n`);
  }
  for (const request of requests) {
    const prompt = renderPrompt(request.domain, request.history, historyLimit);
    process.stdout.write(
      stableLine({
        user_id: request.user_id,
        domain: request.domain,
        instruction: prompt.instruction,
        input: prompt.input,
      }) + "\n",
    );
  }
}

export async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  try {
    if (command === "run") {
      await commandRun(parseFlags(rest));
      return 0;
    }
    if (command === "render") {
      commandRender(parseFlags(rest));
      return 0;
    }
    process.stderr.write(USAGE + "\n");
    return command === undefined || command === "--help" || command === "help" ? 0 : 1;
  } catch (error) {
    const message = error instanceof Error ? error.message : String(error);
    process.stderr.write(`error: ${message}\n`);
    return error instanceof BatchError ? 2 : 1;
  }
}

if (require.main === module) {
  // A downstream reader closing the pipe early (cli.js render | head) is a
  // normal way to stop; exit quietly instead of crashing on EPIPE.
  process.stdout.on("error", (error: NodeJS.ErrnoException) => {
    if (error.code === "EPIPE") {
      process.exit(0);
    }
    throw error;
  });
  void main(process.argv.slice(2)).then((code) => {
    process.exitCode = code;
  });
}
