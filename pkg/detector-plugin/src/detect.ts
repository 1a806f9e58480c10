import * as fs from "fs";

import { RgbImage } from "./png";

export interface ColorRule {
  label: string;
  rgb: [number, number, number];
  tolerance: [number, number, number];
}

export interface RuleSet {
  minArea: number;
  gridRows: number;
  gridCols: number;
  rules: ColorRule[];
}

export interface Detection {
  label: string;
  confidence: number;
  box: [number, number, number, number];
}

export function loadRules(path: string): RuleSet {
  const raw = JSON.parse(fs.readFileSync(path, "utf-8"));
  if (!Array.isArray(raw.rules) || raw.rules.length === 0) {
    throw new Error(`rules file ${path} has no rules`);
  }
  return {
    minArea: raw.min_area ?? 64,
    gridRows: raw.grid_rows ?? 4,
    gridCols: raw.grid_cols ?? 4,
    rules: raw.rules.map((r: any) => ({
      label: String(r.label),
      rgb: r.rgb as [number, number, number],
      tolerance: (r.tolerance ?? [30, 30, 30]) as [number, number, number],
    })),
  };
}

/** Index of the first rule matching the pixel, or -1 for background. */
function classify(data: Uint8Array, offset: number, rules: ColorRule[]): number {
  const r = data[offset];
  const g = data[offset + 1];
  const b = data[offset + 2];
  for (let i = 0; i < rules.length; i++) {
    const rule = rules[i];
    if (
      Math.abs(r - rule.rgb[0]) <= rule.tolerance[0] &&
      Math.abs(g - rule.rgb[1]) <= rule.tolerance[1] &&
      Math.abs(b - rule.rgb[2]) <= rule.tolerance[2]
    ) {
      return i;
    }
  }
  return -1;
}

/**
 * Find connected components of rule-colored pixels and emit one labeled
 * box per component. Components are 4-connected regions of pixels that
 * match the same rule; regions below the minimum area are dropped.
 * Confidence scales with component area relative to one grid cell.
 */
export function detect(image: RgbImage, rules: RuleSet): Detection[] {
  const { width, height, data } = image;
  const labels = new Int16Array(width * height);
  for (let i = 0; i < width * height; i++) {
    labels[i] = classify(data, i * 3, rules.rules) as number;
  }

  const cellArea = (width / rules.gridCols) * (height / rules.gridRows);
  const visited = new Uint8Array(width * height);
  const detections: Detection[] = [];
  const stack = new Int32Array(width * height);

  for (let start = 0; start < width * height; start++) {
    if (visited[start] || labels[start] < 0) continue;
    const ruleIndex = labels[start];
    let top = 0;
    stack[top++] = start;
    visited[start] = 1;
    let area = 0;
    let minX = width, minY = height, maxX = -1, maxY = -1;

    while (top > 0) {
      const idx = stack[--top];
      const x = idx % width;
      const y = (idx / width) | 0;
      area++;
      if (x < minX) minX = x;
      if (x > maxX) maxX = x;
      if (y < minY) minY = y;
      if (y > maxY) maxY = y;

      if (x > 0 && !visited[idx - 1] && labels[idx - 1] === ruleIndex) {
        visited[idx - 1] = 1;
        stack[top++] = idx - 1;
      }
      if (x + 1 < width && !visited[idx + 1] && labels[idx + 1] === ruleIndex) {
        visited[idx + 1] = 1;
        stack[top++] = idx + 1;
      }
      if (y > 0 && !visited[idx - width] && labels[idx - width] === ruleIndex) {
        visited[idx - width] = 1;
        stack[top++] = idx - width;
      }
      if (y + 1 < height && !visited[idx + width] && labels[idx + width] === ruleIndex) {
        visited[idx + width] = 1;
        stack[top++] = idx + width;
      }
    }

    if (area < rules.minArea) continue;
    detections.push({
      label: rules.rules[ruleIndex].label,
      confidence: Math.min(1, area / cellArea),
      // lit pixel (x, y) covers [x, x+1) x [y, y+1) in image coordinates
      box: [minX, minY, maxX + 1, maxY + 1],
    });
  }

  detections.sort((a, b) => a.box[1] - b.box[1] || a.box[0] - b.box[0]);
  return detections;
}
