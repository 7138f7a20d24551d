import { InstancesPayload, InstancesPayloadSchema } from "./api.js";

/** Pure review-screen state: cards built from the service payload and a
 * reducer mirroring the service's save/delete/select semantics. */

export interface CandidateThumb {
  rank: number;
  confidence: number;
  frameIndex: number;
  imageUrl: string;
}

export interface InstanceCard {
  instanceId: number;
  candidates: CandidateThumb[];
  chosenRank: number;
  /** rank -> OCR text; only ever filled from service responses. */
  ocrText: Record<number, string>;
  decision: "saved" | null;
  notice: string | null;
}

export interface ReviewState {
  cards: InstanceCard[];
}

export type ReviewAction =
  | { kind: "select"; instanceId: number; rank: number }
  | { kind: "save"; instanceId: number }
  | { kind: "delete"; instanceId: number }
  | { kind: "ocr-loaded"; instanceId: number; rank: number; text: string };

export class SchemaError extends Error {}

/** One card per non-deleted instance, candidates in rank order. */
export function buildReviewState(
  payload: unknown,
  candidateUrl: (instanceId: number, rank: number) => string,
): ReviewState {
  let parsed: InstancesPayload;
  try {
    parsed = InstancesPayloadSchema.parse(payload);
  } catch (e) {
    throw new SchemaError(`unexpected instances payload: ${(e as Error).message}`);
  }
  const cards: InstanceCard[] = [];
  for (const inst of parsed.instances) {
    if (inst.decision === "deleted") continue;
    const candidates = [...inst.candidates]
      .sort((a, b) => a.rank - b.rank)
      .map((c) => ({
        rank: c.rank,
        confidence: c.confidence,
        frameIndex: c.frame_index,
        imageUrl: candidateUrl(inst.id, c.rank),
      }));
    const ocrText: Record<number, string> = {};
    for (const [rank, text] of Object.entries(inst.ocr)) ocrText[Number(rank)] = text;
    cards.push({
      instanceId: inst.id,
      candidates,
      chosenRank: inst.chosen_rank,
      ocrText,
      decision: inst.decision,
      notice: null,
    });
  }
  return { cards };
}

function replaceCard(state: ReviewState, card: InstanceCard): ReviewState {
  return { cards: state.cards.map((c) => (c.instanceId === card.instanceId ? card : c)) };
}

/** Pure reducer; unknown instance ids leave the state untouched. */
export function applyAction(state: ReviewState, action: ReviewAction): ReviewState {
  const card = state.cards.find((c) => c.instanceId === action.instanceId);
  if (!card) return state;

  switch (action.kind) {
    case "select": {
      if (card.decision === "saved") {
        return replaceCard(state, { ...card, notice: "saved records are immutable" });
      }
      if (!card.candidates.some((c) => c.rank === action.rank)) {
        return replaceCard(state, { ...card, notice: `no candidate with rank ${action.rank}` });
      }
      return replaceCard(state, { ...card, chosenRank: action.rank, notice: null });
    }
    case "save": {
      if (card.decision === "saved") {
        return replaceCard(state, { ...card, notice: "already saved" });
      }
      return replaceCard(state, { ...card, decision: "saved", notice: null });
    }
    case "delete": {
      if (card.decision === "saved") {
        return replaceCard(state, { ...card, notice: "saved records are immutable" });
      }
      return { cards: state.cards.filter((c) => c.instanceId !== action.instanceId) };
    }
    case "ocr-loaded": {
      return replaceCard(state, {
        ...card,
        ocrText: { ...card.ocrText, [action.rank]: action.text },
      });
    }
  }
}
