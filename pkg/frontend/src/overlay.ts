/** Canvas overlay: the frame image plus keypoint markers and the skeleton,
 * head and body groups in their own colors. */

import { KEYPOINTS, KeypointName, PART_COLORS, partOf, SKELETON } from "./keypoints.js";
import { AnnotationSession } from "./session.js";
import { imageToScreen, Viewport } from "./view.js";

export function drawFrame(
  ctx: CanvasRenderingContext2D,
  image: HTMLImageElement | null,
  view: Viewport,
  session: AnnotationSession,
) {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  ctx.fillStyle = "#16161e";
  ctx.fillRect(0, 0, width, height);
  if (image && image.complete && image.naturalWidth > 0) {
    ctx.save();
    ctx.imageSmoothingEnabled = view.zoom < 4;
    ctx.setTransform(view.zoom, 0, 0, view.zoom, view.panX, view.panY);
    ctx.drawImage(image, 0, 0);
    ctx.restore();
  }
  const task = session.task;
  const placed = new Map<KeypointName, { x: number; y: number }>();
  for (const keypoint of KEYPOINTS) {
    const click = session.get(task.cameraId, task.videoFrame, keypoint);
    if (click && !click.occluded && click.u !== null && click.v !== null) {
      placed.set(keypoint, imageToScreen(view, { x: click.u, y: click.v }));
    }
  }
  ctx.lineWidth = 1.5;
  for (const [a, b] of SKELETON) {
    const pa = placed.get(a);
    const pb = placed.get(b);
    if (!pa || !pb) continue;
    ctx.strokeStyle = PART_COLORS[partOf(a)];
    ctx.beginPath();
    ctx.moveTo(pa.x, pa.y);
    ctx.lineTo(pb.x, pb.y);
    ctx.stroke();
  }
  for (const [keypoint, p] of placed) {
    const active = keypoint === session.cursor;
    ctx.beginPath();
    ctx.arc(p.x, p.y, active ? 6 : 4, 0, Math.PI * 2);
    ctx.fillStyle = PART_COLORS[partOf(keypoint)];
    ctx.fill();
    if (active) {
      ctx.strokeStyle = "#ffffff";
      ctx.stroke();
    }
    ctx.font = "11px ui-monospace, monospace";
    ctx.fillStyle = "#c0caf5";
    ctx.fillText(keypoint, p.x + 8, p.y - 6);
  }
}

export function drawCrosshair(
  ctx: CanvasRenderingContext2D,
  x: number,
  y: number,
  color = "#ffcc00",
) {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(x - 12, y);
  ctx.lineTo(x + 12, y);
  ctx.moveTo(x, y - 12);
  ctx.lineTo(x, y + 12);
  ctx.stroke();
}
