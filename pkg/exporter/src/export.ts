/**
 * Batch export: run the requested backbones over an image folder and write
 * one DFOM bundle per image.
 *
 * Model loading happens once per run. A backbone whose weights are missing
 * is skipped for the whole run with the reason recorded in the manifest, so
 * every emitted bundle carries the same record set (and therefore the same
 * fused channel count downstream). If a loaded backbone fails on a single
 * image, that image is marked failed and no bundle is written for it; a
 * partial bundle is never left on disk.
 */

import { promises as fs } from "node:fs";
import * as path from "node:path";
import { FeatureRecord, readBundle, writeBundle } from "./dfom.js";
import {
  CANONICAL_ORDER,
  CanonicalModel,
  Extractor,
  ModelUnavailableError,
  defaultSpecs,
  loadExtractor,
  loadImage,
} from "./features.js";

export type ExtractorFactory = () => Promise<Extractor>;

export interface ExportOptions {
  imageDir: string;
  outDir: string;
  /** which backbones to run; order is ignored, bundles use the canonical order */
  models: readonly CanonicalModel[];
  /** root holding <model>/model.json trees; default "./models" */
  modelsRoot?: string;
  /** test seam: per-model factories override the tfjs loaders */
  registry?: Partial<Record<CanonicalModel, ExtractorFactory>>;
}

export interface ModelStatus {
  id: CanonicalModel;
  status: "loaded" | "skipped";
  reason?: string;
}

export interface ImageStatus {
  image: string;
  status: "exported" | "failed";
  bundle?: string;
  reason?: string;
  records?: { modelId: string; h: number; w: number; c: number }[];
}

export interface ExportManifest {
  imageDir: string;
  outDir: string;
  models: ModelStatus[];
  images: ImageStatus[];
}

export class ConfigError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ConfigError";
  }
}

/** Dedupe and reorder a model list into the canonical bundle order. */
export function canonicalModels(models: readonly string[]): CanonicalModel[] {
  const wanted = new Set<string>(models);
  for (const m of wanted) {
    if (!(CANONICAL_ORDER as readonly string[]).includes(m)) {
      throw new ConfigError(
        `unknown model '${m}' (choose from ${CANONICAL_ORDER.join(", ")})`,
      );
    }
  }
  if (wanted.size === 0) throw new ConfigError("at least one model is required");
  return CANONICAL_ORDER.filter((m) => wanted.has(m));
}

async function listImages(imageDir: string): Promise<string[]> {
  let entries;
  try {
    entries = await fs.readdir(imageDir, { withFileTypes: true });
  } catch (err) {
    throw new ConfigError(`cannot read image dir: ${(err as Error).message}`);
  }
  return entries
    .filter((e) => e.isFile() && /\.png$/i.test(e.name))
    .map((e) => e.name)
    .sort();
}

export async function exportImages(opts: ExportOptions): Promise<ExportManifest> {
  const order = canonicalModels(opts.models);
  const names = await listImages(opts.imageDir);
  await fs.mkdir(opts.outDir, { recursive: true });

  const specs = defaultSpecs(opts.modelsRoot ?? "models");
  const loaded: { id: CanonicalModel; extractor: Extractor }[] = [];
  const modelStatuses: ModelStatus[] = [];
  for (const id of order) {
    const factory = opts.registry?.[id] ?? (() => loadExtractor(specs[id]));
    try {
      loaded.push({ id, extractor: await factory() });
      modelStatuses.push({ id, status: "loaded" });
    } catch (err) {
      if (err instanceof ModelUnavailableError) {
        modelStatuses.push({ id, status: "skipped", reason: err.message });
      } else {
        throw err;
      }
    }
  }

  const images: ImageStatus[] = [];
  try {
    for (const name of names) {
      const stem = name.replace(/\.png$/i, "");
      const bundlePath = path.join(opts.outDir, `${stem}.dfom`);
      if (loaded.length === 0) {
        images.push({ image: name, status: "failed", reason: "no models available" });
        continue;
      }
      try {
        const img = await loadImage(path.join(opts.imageDir, name));
        const records: FeatureRecord[] = [];
        for (const { extractor } of loaded) {
          records.push(await extractor.embed(img));
        }
        await writeBundle(records, bundlePath);
        const check = await readBundle(bundlePath);
        images.push({
          image: name,
          status: "exported",
          bundle: `${stem}.dfom`,
          records: check.map((r) => ({ modelId: r.modelId, h: r.h, w: r.w, c: r.c })),
        });
      } catch (err) {
        // a stale bundle from an earlier run must not outlive a failed image
        await fs.rm(bundlePath, { force: true });
        images.push({ image: name, status: "failed", reason: (err as Error).message });
      }
    }
  } finally {
    for (const { extractor } of loaded) extractor.dispose();
  }

  const manifest: ExportManifest = {
    imageDir: opts.imageDir,
    outDir: opts.outDir,
    models: modelStatuses,
    images,
  };
  await fs.writeFile(
    path.join(opts.outDir, "manifest.json"),
    JSON.stringify(manifest, null, 2) + "\n",
  );
  return manifest;
}
