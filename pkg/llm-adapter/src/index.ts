export {
  DEFAULT_HISTORY_LIMIT,
  Domain,
  INPUT_PREFIX_MUSIC,
  INPUT_PREFIX_VIDEO,
  INSTRUCTION_MUSIC,
  INSTRUCTION_VIDEO,
  REQUESTED_COUNT,
  RenderedPrompt,
  promptText,
  renderPrompt,
} from "./prompts";
export { parseResponse } from "./parse";
export {
  ParseReject,
  PredictionRequest,
  PredictionResponse,
  RequestFile,
  formatResponseLine,
  readCheckpoint,
  readRequestFile,
  stableLine,
} from "./interchange";
export {
  Endpoint,
  HttpEndpoint,
  MockEndpoint,
  PermanentEndpointError,
  endpointFromSpec,
} from "./endpoint";
export { BatchError, RunOptions, RunSummary, runBatch } from "./runner";
