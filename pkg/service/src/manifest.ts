import { readFileSync } from 'node:fs';

/**
 * Image ids resolve to files through an explicit manifest (a JSON object of
 * id -> path relative to the image root) rather than filename conventions,
 * since dataset layouts differ.
 */
export type ImageManifest = Record<string, string>;

export function loadManifest(path: string): ImageManifest {
  const parsed = JSON.parse(readFileSync(path, 'utf-8'));
  if (typeof parsed !== 'object' || parsed === null || Array.isArray(parsed)) {
    throw new Error(`${path}: manifest must be a JSON object of id -> relative path`);
  }
  for (const [id, rel] of Object.entries(parsed)) {
    if (typeof rel !== 'string' || rel.length === 0) {
      throw new Error(`${path}: manifest entry ${id} must map to a relative path`);
    }
  }
  return parsed as ImageManifest;
}
