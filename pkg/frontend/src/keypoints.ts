/** The 9-keypoint vocabulary, grouped by rigid body part. The cycling order
 * matches the annotation workflow: head keypoints first, then body. */

export const HEAD_KEYPOINTS = ["beak", "nose", "left_eye", "right_eye"] as const;
export const BACKPACK_KEYPOINTS = [
  "left_shoulder",
  "right_shoulder",
  "top_keel",
  "bottom_keel",
  "tail",
] as const;

export const KEYPOINTS = [...HEAD_KEYPOINTS, ...BACKPACK_KEYPOINTS] as const;

export type KeypointName = (typeof KEYPOINTS)[number];

export function isKeypointName(name: string): name is KeypointName {
  return (KEYPOINTS as readonly string[]).includes(name);
}

export function partOf(name: KeypointName): "head" | "backpack" {
  return (HEAD_KEYPOINTS as readonly string[]).includes(name)
    ? "head"
    : "backpack";
}

export const PART_COLORS = { head: "#ff9e64", backpack: "#7aa2f7" } as const;

/** Skeleton edges drawn in the overlay, per body-part group. */
export const SKELETON: [KeypointName, KeypointName][] = [
  ["beak", "nose"],
  ["nose", "left_eye"],
  ["nose", "right_eye"],
  ["left_eye", "right_eye"],
  ["left_shoulder", "right_shoulder"],
  ["left_shoulder", "top_keel"],
  ["right_shoulder", "top_keel"],
  ["top_keel", "bottom_keel"],
  ["left_shoulder", "tail"],
  ["right_shoulder", "tail"],
];
