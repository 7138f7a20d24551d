import { ApiError, ReviewApi } from "./api.js";
import { pollJob } from "./poll.js";
import { applyAction, buildReviewState, InstanceCard, ReviewAction, ReviewState } from "./state.js";

/** Minimal operator UI: submit a stream, watch progress, review instance
 * cards (best-3 thumbnails), select/OCR/save/delete. */

const api = new ReviewApi(localStorage.getItem("plateflow-api") ?? "http://127.0.0.1:8000");

let jobId: string | null = null;
let state: ReviewState = { cards: [] };
const inflightOcr = new Set<number>();

function dispatch(action: ReviewAction) {
  state = applyAction(state, action);
  render();
}

async function requestOcr(card: InstanceCard, rank: number) {
  if (!jobId || inflightOcr.has(card.instanceId)) return;
  inflightOcr.add(card.instanceId);
  try {
    const resp = await api.select(jobId, card.instanceId, rank);
    dispatch({ kind: "ocr-loaded", instanceId: card.instanceId, rank, text: resp.ocr_text });
  } catch (e) {
    setStatus(e instanceof ApiError ? `${e.code}: ${e.message}` : String(e));
  } finally {
    inflightOcr.delete(card.instanceId);
  }
}

function setStatus(text: string) {
  const el = document.getElementById("status");
  if (el) el.textContent = text;
}

function cardElement(card: InstanceCard): HTMLElement {
  const root = document.createElement("div");
  root.className = "card";
  root.dataset.instance = String(card.instanceId);

  const title = document.createElement("h3");
  title.textContent = `Instance ${card.instanceId}` + (card.decision === "saved" ? " (saved)" : "");
  root.appendChild(title);

  const strip = document.createElement("div");
  strip.className = "thumbs";
  for (const cand of card.candidates) {
    const wrap = document.createElement("figure");
    const img = document.createElement("img");
    img.src = cand.imageUrl;
    img.alt = `candidate rank ${cand.rank}`;
    img.width = 160;
    if (cand.rank === card.chosenRank) img.classList.add("chosen");
    img.onclick = async () => {
      dispatch({ kind: "select", instanceId: card.instanceId, rank: cand.rank });
      await requestOcr(card, cand.rank);
    };
    const cap = document.createElement("figcaption");
    cap.textContent = `#${cand.rank} conf ${cand.confidence.toFixed(2)} frame ${cand.frameIndex}`;
    wrap.append(img, cap);
    strip.appendChild(wrap);
  }
  root.appendChild(strip);

  const ocr = document.createElement("p");
  ocr.className = "ocr";
  ocr.textContent = card.ocrText[card.chosenRank] ?? "(no OCR yet — click a thumbnail)";
  root.appendChild(ocr);

  if (card.notice) {
    const notice = document.createElement("p");
    notice.className = "notice";
    notice.textContent = card.notice;
    root.appendChild(notice);
  }

  const actions = document.createElement("div");
  const saveBtn = document.createElement("button");
  saveBtn.textContent = "Save";
  saveBtn.disabled = card.decision === "saved";
  saveBtn.onclick = async () => {
    if (!jobId) return;
    try {
      await api.save(jobId, card.instanceId);
      dispatch({ kind: "save", instanceId: card.instanceId });
    } catch (e) {
      setStatus(e instanceof ApiError ? `${e.code}: ${e.message}` : String(e));
    }
  };
  const deleteBtn = document.createElement("button");
  deleteBtn.textContent = "Delete";
  deleteBtn.onclick = async () => {
    if (!jobId) return;
    try {
      await api.deleteInstance(jobId, card.instanceId);
      dispatch({ kind: "delete", instanceId: card.instanceId });
    } catch (e) {
      setStatus(e instanceof ApiError ? `${e.code}: ${e.message}` : String(e));
    }
  };
  actions.append(saveBtn, deleteBtn);
  root.appendChild(actions);
  return root;
}

function render() {
  const list = document.getElementById("cards");
  if (!list) return;
  list.replaceChildren(...state.cards.map(cardElement));
}

async function submit() {
  const input = document.getElementById("stream-path") as HTMLInputElement | null;
  if (!input?.value) return;
  try {
    setStatus("submitting…");
    jobId = await api.submitJob(input.value);
    const done = await pollJob(api, jobId, (job) =>
      setStatus(`${job.status}: ${job.progress.frames_processed}/${job.progress.frames_total} frames`),
    );
    setStatus(`job ${done.job_id} done (${done.stream_id})`);
    const payload = await api.listInstances(jobId);
    state = buildReviewState(payload, (inst, rank) => api.candidateUrl(jobId!, inst, rank));
    render();
  } catch (e) {
    setStatus(e instanceof ApiError ? `${e.code}: ${e.message}` : String(e));
  }
}

document.getElementById("submit")?.addEventListener("click", () => void submit());
