/** DOM wiring for the annotation tool. The interesting logic lives in
 * session.ts / view.ts; this file is glue between browser events and those
 * modules. Event handlers that carry coordinate math are exported so the
 * test suite can drive them with scripted clicks. */

import { ApiClient, SequenceInfo, ServiceConflict } from "./api.js";
import { KEYPOINTS } from "./keypoints.js";
import { drawCrosshair, drawFrame } from "./overlay.js";
import { AnnotationSession, Task } from "./session.js";
import { IDENTITY_VIEW, panBy, Viewport, zoomAt } from "./view.js";

/** Convert a mouse event position (client coords) into a stored image-pixel
 * click: subtract the canvas origin, then undo the viewport transform. */
export function handleCanvasClick(
  session: AnnotationSession,
  view: Viewport,
  rectLeft: number,
  rectTop: number,
  clientX: number,
  clientY: number,
) {
  return session.clickAt(
    { x: clientX - rectLeft, y: clientY - rectTop },
    view,
  );
}

export function handleKey(session: AnnotationSession, key: string): boolean {
  switch (key) {
    case "Tab":
    case "e":
      session.nextKeypoint();
      return true;
    case "q":
      session.prevKeypoint();
      return true;
    case "o":
      session.markOccluded();
      session.nextKeypoint();
      return true;
    case "x":
      session.clearCurrent();
      return true;
    case "ArrowRight":
      session.nextTask();
      return true;
    case "ArrowLeft":
      session.prevTask();
      return true;
    default:
      return false;
  }
}

interface UiState {
  api: ApiClient;
  info: SequenceInfo;
  session: AnnotationSession;
  view: Viewport;
  etag: string | null;
  image: HTMLImageElement | null;
}

function buildTasks(info: SequenceInfo, framesPerView: number): Task[] {
  // 5-10 annotated frames across all views: interleave cameras so the
  // operator covers every angle early.
  const stride = Math.max(1, Math.floor(info.n_video_frames / framesPerView));
  const tasks: Task[] = [];
  for (let i = 0; i < framesPerView; i++) {
    for (const cameraId of info.cameras) {
      tasks.push({ cameraId, videoFrame: i * stride });
    }
  }
  return tasks;
}

async function loadFrameImage(state: UiState): Promise<void> {
  const task = state.session.task;
  const useCrop = await state.api.cropAvailable(
    state.info.sequence_id,
    state.session.individualId,
    task.cameraId,
    task.videoFrame,
  );
  const url = useCrop
    ? state.api.cropUrl(state.info.sequence_id, state.session.individualId,
        task.cameraId, task.videoFrame)
    : state.api.frameUrl(state.info.sequence_id, task.cameraId,
        task.videoFrame);
  state.image = await new Promise((resolve) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => resolve(null);
    img.src = url;
  });
}

function status(state: UiState): string {
  const task = state.session.task;
  return (
    `${state.session.individualId} | ${task.cameraId} frame ` +
    `${task.videoFrame} | keypoint: ${state.session.cursor} ` +
    `(${state.session.taskProgress()}/${KEYPOINTS.length})` +
    (state.session.dirty ? " | UNSAVED" : "")
  );
}

async function save(state: UiState): Promise<void> {
  try {
    await state.api.putAnnotations(
      state.session.individualId,
      state.session.serialize(),
      state.etag,
    );
    state.session.markSaved();
    const fetched = await state.api.getAnnotations(state.session.individualId);
    state.etag = fetched?.etag ?? null;
  } catch (err) {
    if (err instanceof ServiceConflict) {
      if (confirm("Saved annotations changed on the server. Overwrite?")) {
        state.etag = null;
        return save(state);
      }
      return;
    }
    throw err;
  }
}

export async function boot(): Promise<void> {
  const canvas = document.getElementById("frame") as HTMLCanvasElement;
  const statusBox = document.getElementById("status") as HTMLElement;
  const saveButton = document.getElementById("save") as HTMLButtonElement;
  const buildButton = document.getElementById("build") as HTMLButtonElement;
  const ctx = canvas.getContext("2d")!;

  const api = new ApiClient("");
  const [info] = await api.listSequences();
  const individual =
    new URLSearchParams(location.search).get("individual") ??
    info.individuals[0];
  const session = new AnnotationSession(
    info.sequence_id,
    individual,
    buildTasks(info, 8),
  );
  const state: UiState = {
    api,
    info,
    session,
    view: { ...IDENTITY_VIEW },
    etag: null,
    image: null,
  };
  const saved = await api.getAnnotations(individual);
  if (saved) {
    session.load(saved.payload);
    state.etag = saved.etag;
  }
  await loadFrameImage(state);

  let lastPointer: { x: number; y: number } | null = null;
  let dragging = false;

  const redraw = () => {
    drawFrame(ctx, state.image, state.view, session);
    if (lastPointer) drawCrosshair(ctx, lastPointer.x, lastPointer.y);
    statusBox.textContent = status(state);
  };

  canvas.addEventListener("click", (event) => {
    if (dragging) return;
    const rect = canvas.getBoundingClientRect();
    handleCanvasClick(session, state.view, rect.left, rect.top,
      event.clientX, event.clientY);
    session.nextKeypoint();
    redraw();
  });
  canvas.addEventListener("wheel", (event) => {
    event.preventDefault();
    const rect = canvas.getBoundingClientRect();
    const anchor = {
      x: event.clientX - rect.left,
      y: event.clientY - rect.top,
    };
    state.view = zoomAt(state.view, anchor, event.deltaY < 0 ? 1.25 : 0.8);
    redraw();
  });
  canvas.addEventListener("mousedown", () => (dragging = false));
  canvas.addEventListener("mousemove", (event) => {
    const rect = canvas.getBoundingClientRect();
    lastPointer = {
      x: event.clientX - rect.left,
      y: event.clientY - rect.top,
    };
    if (event.buttons === 2 || (event.buttons === 1 && event.shiftKey)) {
      dragging = true;
      state.view = panBy(state.view, event.movementX, event.movementY);
    }
    redraw();
  });
  canvas.addEventListener("contextmenu", (event) => event.preventDefault());
  document.addEventListener("keydown", async (event) => {
    if (event.key === "s" && (event.ctrlKey || event.metaKey)) {
      event.preventDefault();
      await save(state);
      redraw();
      return;
    }
    const taskBefore = session.taskIndex;
    if (handleKey(session, event.key)) {
      event.preventDefault();
      if (session.taskIndex !== taskBefore) {
        state.view = { ...IDENTITY_VIEW };
        await loadFrameImage(state);
      }
      redraw();
    }
  });
  saveButton.addEventListener("click", async () => {
    await save(state);
    redraw();
  });
  buildButton.addEventListener("click", async () => {
    if (session.dirty) await save(state);
    const result = await state.api.buildTemplate(individual);
    statusBox.textContent = `template built: ${JSON.stringify(result).slice(0, 120)}...`;
  });
  window.addEventListener("beforeunload", (event) => {
    if (session.dirty) event.preventDefault();
  });

  redraw();
}

if (typeof document !== "undefined" && document.getElementById("frame")) {
  boot();
}
