/**
 * Prompt templates for the two recommendation domains.
 *
 * The instruction and input strings must stay byte-identical to the ones the
 * pipeline writes into its fine-tune export files; golden-file tests pin them.
 */

export type Domain = "music" | "video";

export const INSTRUCTION_MUSIC =
  "Recommend ten other songs based on the user's listening history.";
export const INSTRUCTION_VIDEO =
  "Recommend 10 other movies based on the user's watching history.";
export const INPUT_PREFIX_MUSIC = "The user listened to songs ";
export const INPUT_PREFIX_VIDEO = "The user watched movies ";

/** Both instructions ask for ten titles; parsed lists are capped here. */
export const REQUESTED_COUNT = 10;

/** How many history names go into one prompt unless configured otherwise. */
export const DEFAULT_HISTORY_LIMIT = 50;

export interface RenderedPrompt {
  instruction: string;
  input: string;
}

function quoted(names: string[]): string {
  return names.map((name) => `"${name}"`).join(", ");
}

/**
 * Render the prompt for one request.
 *
 * Names arrive already ordered by the producer (strongest first); only the
 * first `historyLimit` of them fit the prompt budget.
 */
export function renderPrompt(
  domain: Domain,
  names: string[],
  historyLimit: number = DEFAULT_HISTORY_LIMIT,
): RenderedPrompt {
  if (names.length === 0) {
    throw new Error("cannot render a prompt from an empty history");
  }
  const kept = names.slice(0, historyLimit);
  const instruction = domain === "video" ? INSTRUCTION_VIDEO : INSTRUCTION_MUSIC;
  const prefix = domain === "video" ? INPUT_PREFIX_VIDEO : INPUT_PREFIX_MUSIC;
  return { instruction, input: prefix + quoted(kept) + "." };
}

/** The single-string form sent to endpoints that take one text field. */
export function promptText(prompt: RenderedPrompt): string {
  return prompt.instruction + "\n" + prompt.input;
}
