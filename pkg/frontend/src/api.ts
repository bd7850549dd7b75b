/** Typed client for the annotation service. The UI talks only to these
 * endpoints; it never touches files directly. */

import { AnnotationEntry } from "./session.js";
import { CalibrationClickFrame } from "./calibration.js";

export interface SequenceInfo {
  sequence_id: string;
  cameras: string[];
  individuals: string[];
  n_video_frames: number;
  keypoints: string[];
}

export interface Fetched<T> {
  payload: T;
  etag: string | null;
}

export class ServiceConflict extends Error {}
export class ServiceInvalid extends Error {}

export class ApiClient {
  constructor(private base: string = "") {}

  private url(path: string): string {
    return `${this.base}${path}`;
  }

  async listSequences(): Promise<SequenceInfo[]> {
    const response = await fetch(this.url("/sequences"));
    if (!response.ok) throw new Error(`sequences: HTTP ${response.status}`);
    return response.json();
  }

  frameUrl(sequenceId: string, cameraId: string, frame: number): string {
    return this.url(`/sequences/${sequenceId}/frames/${cameraId}/${frame}`);
  }

  cropUrl(
    sequenceId: string,
    individualId: string,
    cameraId: string,
    frame: number,
  ): string {
    return this.url(
      `/sequences/${sequenceId}/crops/${individualId}/${cameraId}/${frame}`,
    );
  }

  /** HEAD-free probe: the crop endpoint 404s when no track/box exists yet,
   * in which case the UI falls back to the full frame with manual zoom. */
  async cropAvailable(
    sequenceId: string,
    individualId: string,
    cameraId: string,
    frame: number,
  ): Promise<boolean> {
    const response = await fetch(
      this.cropUrl(sequenceId, individualId, cameraId, frame),
    );
    return response.ok;
  }

  async getAnnotations(
    individualId: string,
  ): Promise<Fetched<AnnotationEntry[]> | null> {
    const response = await fetch(this.url(`/annotations/${individualId}`));
    if (response.status === 404) return null;
    if (!response.ok) throw new Error(`annotations: HTTP ${response.status}`);
    return {
      payload: await response.json(),
      etag: response.headers.get("ETag"),
    };
  }

  async putAnnotations(
    individualId: string,
    entries: AnnotationEntry[],
    etag: string | null,
  ): Promise<void> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
    };
    if (etag) headers["If-Match"] = etag;
    const response = await fetch(this.url(`/annotations/${individualId}`), {
      method: "PUT",
      headers,
      body: JSON.stringify(entries),
    });
    if (response.status === 409) {
      throw new ServiceConflict("annotations changed on the server");
    }
    if (response.status === 422) {
      throw new ServiceInvalid(await response.text());
    }
    if (!response.ok) throw new Error(`save: HTTP ${response.status}`);
  }

  async getCalibrationClicks(
    cameraId: string,
  ): Promise<Fetched<CalibrationClickFrame[]> | null> {
    const response = await fetch(this.url(`/calibration-clicks/${cameraId}`));
    if (response.status === 404) return null;
    if (!response.ok) {
      throw new Error(`calibration clicks: HTTP ${response.status}`);
    }
    return {
      payload: await response.json(),
      etag: response.headers.get("ETag"),
    };
  }

  async putCalibrationClicks(
    cameraId: string,
    frames: CalibrationClickFrame[],
    etag: string | null,
  ): Promise<void> {
    const headers: Record<string, string> = {
      "Content-Type": "application/json",
    };
    if (etag) headers["If-Match"] = etag;
    const response = await fetch(this.url(`/calibration-clicks/${cameraId}`), {
      method: "PUT",
      headers,
      body: JSON.stringify(frames),
    });
    if (response.status === 409) {
      throw new ServiceConflict("calibration clicks changed on the server");
    }
    if (response.status === 422) {
      throw new ServiceInvalid(await response.text());
    }
    if (!response.ok) throw new Error(`save: HTTP ${response.status}`);
  }

  async buildTemplate(individualId: string): Promise<unknown> {
    const response = await fetch(
      this.url(`/template/${individualId}/build`),
      { method: "POST" },
    );
    if (!response.ok) {
      throw new Error(`template build failed: ${await response.text()}`);
    }
    return response.json();
  }
}
