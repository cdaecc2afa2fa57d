/**
 * Model endpoints. The adapter talks to anything that can complete an
 * instruction prompt; a deterministic mock ships for tests and offline runs.
 */

import type { PredictionRequest } from "./interchange";
import { promptText, RenderedPrompt } from "./prompts";

export interface Endpoint {
  /** Return the raw completion text for one rendered prompt. */
  complete(prompt: RenderedPrompt, request: PredictionRequest): Promise<string>;
}

/** Raised for failures that retrying cannot fix, such as HTTP 4xx. */
export class PermanentEndpointError extends Error {}

/**
 * Deterministic offline endpoint: echoes the request's own history back as a
 * quoted list. Useful for round-trip tests and for exercising the pipeline
 * without a model server.
 */
export class MockEndpoint implements Endpoint {
  async complete(_prompt: RenderedPrompt, request: PredictionRequest): Promise<string> {
    return request.history.map((name) => `"${name}"`).join(", ");
  }
}

export interface HttpEndpointOptions {
  url: string;
  timeoutMs?: number;
}

/**
 * POSTs one JSON body per prompt and expects a JSON reply whose "text" field
 * holds the completion. Plain-text replies are accepted as-is. HTTP 4xx is
 * permanent; network errors and 5xx are transient and eligible for retry.
 */
export class HttpEndpoint implements Endpoint {
  private readonly url: string;
  private readonly timeoutMs: number;

  constructor(options: HttpEndpointOptions) {
    this.url = options.url;
    this.timeoutMs = options.timeoutMs ?? 60_000;
  }

  async complete(prompt: RenderedPrompt, request: PredictionRequest): Promise<string> {
    const controller = new AbortController();
    const timer = setTimeout(() => controller.abort(), this.timeoutMs);
    try {
      const response = await fetch(this.url, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          instruction: prompt.instruction,
          input: prompt.input,
          prompt: promptText(prompt),
          user_id: request.user_id,
          domain: request.domain,
        }),
        signal: controller.signal,
      });
      const body = await response.text();
      if (!response.ok) {
        const message = `endpoint returned ${response.status}: ${body.slice(0, 200)}`;
        if (response.status >= 400 && response.status < 500) {
          throw new PermanentEndpointError(message);
        }
        throw new Error(message);
      }
      try {
        const parsed = JSON.parse(body) as Record<string, unknown>;
        if (typeof parsed.text === "string") {
          return parsed.text;
        }
      } catch {
        // Not JSON: treat the body as the completion itself.
      }
      return body;
    } finally {
      clearTimeout(timer);
    }
  }
}

/**
 * Build an endpoint from a spec string: "mock:" for the offline echo,
 * anything starting with http:// or https:// for a live server.
 */
export function endpointFromSpec(spec: string): Endpoint {
  if (spec === "mock:" || spec === "mock") {
    return new MockEndpoint();
  }
  if (spec.startsWith("http://") || spec.startsWith("https://")) {
    return new HttpEndpoint({ url: spec });
  }
  throw new Error(`unknown endpoint spec ${JSON.stringify(spec)}; use mock: or an http(s) URL`);
}
