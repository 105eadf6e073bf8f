/**
 * Numeric summary for the comparison side panel.
 *
 * For every candidate after the first, report how far each agent's
 * predicted mean trajectory moves relative to its prediction under the
 * first candidate: the maximum over prediction steps of the Euclidean
 * distance between the two means. This is pure bookkeeping over service
 * responses; no prediction is computed here.
 */

import { distance } from "./geometry.js";
import type { CandidatePrediction } from "./types.js";

export interface AgentShift {
  agentId: number;
  /** max over steps of |mean_other(t) - mean_first(t)|, world meters */
  maxShiftM: number;
  /** 0-based prediction step where the max occurs */
  stepOfMax: number;
}

export interface CandidateComparison {
  candidateId: string;
  /** per-agent shifts, largest first */
  agents: AgentShift[];
  /** largest shift across agents; 0 when there is nothing to compare */
  maxShiftM: number;
}

export function shiftVersusFirst(first: CandidatePrediction, other: CandidatePrediction): CandidateComparison {
  const baseline = new Map(first.agents.map((a) => [a.agent_id, a]));
  const agents: AgentShift[] = [];
  for (const agent of other.agents) {
    const ref = baseline.get(agent.agent_id);
    if (!ref) continue;
    let maxShiftM = 0;
    let stepOfMax = 0;
    const steps = Math.min(agent.mean.length, ref.mean.length);
    for (let t = 0; t < steps; t++) {
      const a = agent.mean[t];
      const b = ref.mean[t];
      if (!a || !b) continue; // agent absent at this step in one rollout
      const d = distance(a, b);
      if (d > maxShiftM) {
        maxShiftM = d;
        stepOfMax = t;
      }
    }
    agents.push({ agentId: agent.agent_id, maxShiftM, stepOfMax });
  }
  agents.sort((a, b) => b.maxShiftM - a.maxShiftM);
  return {
    candidateId: other.candidate_id ?? "",
    agents,
    maxShiftM: agents.length ? (agents[0] as AgentShift).maxShiftM : 0,
  };
}
