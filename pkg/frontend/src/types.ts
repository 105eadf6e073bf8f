/**
 * Wire types for the what-if prediction service.
 *
 * These mirror the JSON schemas served by the backend (`GET /info`,
 * `GET /scenarios`, `GET /scenarios/{id}`, `POST /predict`).  All
 * coordinates on the wire are world meters; the UI converts to screen
 * pixels only when drawing.
 */

export type XY = [number, number];

export interface ServiceInfo {
  schema_version: number;
  model: string;
  checkpoint_id: string;
  n_obs: number;
  n_pred: number;
  dt: number;
  type_labels: string[];
  loss_mode: string;
  max_candidates: number;
  deterministic: boolean;
}

export interface ScenarioSummary {
  scenario_id: string;
  name: string;
  n_agents: number;
}

export interface ScenarioAgent {
  agent_id: number;
  type: string;
  observed: XY[];
  future: XY[];
}

export interface ScenarioRobot {
  agent_id: number;
  type: string;
  observed: XY[];
  planned: XY[];
}

export interface Scenario {
  schema_version: number;
  scenario_id: string;
  name: string;
  n_obs: number;
  n_pred: number;
  dt: number;
  agents: ScenarioAgent[];
  robot: ScenarioRobot;
}

export interface CandidateIn {
  id: string;
  path: XY[];
}

export interface PredictRequest {
  schema_version?: number;
  scenario_id?: string;
  scenario?: Scenario;
  candidates: CandidateIn[];
  sample?: boolean;
  seed?: number;
}

/** Per-agent Gaussian track; entries are null where nothing was predicted. */
export interface AgentPrediction {
  agent_id: number;
  type: string;
  predicted: boolean;
  mean: (XY | null)[];
  sigma: (XY | null)[];
  rho: (number | null)[];
}

export interface CandidatePrediction {
  schema_version: number;
  candidate_id?: string;
  n_obs: number;
  n_pred: number;
  dt: number;
  robot_path: XY[];
  agents: AgentPrediction[];
}

export interface PredictResponse {
  schema_version: number;
  checkpoint_id: string;
  compute_ms: number;
  candidates: CandidatePrediction[];
}
