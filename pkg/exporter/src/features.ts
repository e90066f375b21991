/**
 * Image loading and backbone feature extraction.
 *
 * Each canonical backbone id maps to a tfjs model directory (model.json plus
 * weight shards, as produced by tensorflowjs_converter). The exporter takes
 * the model's final spatial feature map before any task head:
 *
 *   - a rank-4 NHWC output is used directly (last one if the graph has several)
 *   - a rank-3 token output (B, N, D) is reshaped to a square grid; a leading
 *     class token is dropped when N = g*g + 1
 *
 * Grids are emitted at the model's native resolution. Resizing to a common
 * grid is the consumer's job, so nothing is interpolated here.
 */

import { promises as fs } from "node:fs";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import { PNG } from "pngjs";
import type { FeatureRecord } from "./dfom.js";

/** Raised when a backbone's weights cannot be loaded; export skips the model. */
export class ModelUnavailableError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ModelUnavailableError";
  }
}

/** Raised when a loaded model produces an output no rule maps to a grid. */
export class ExtractionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "ExtractionError";
  }
}

// ---------------------------------------------------------------- images

/** Decoded RGB image, values in [0, 1], interleaved (H, W, 3). */
export interface ImageTensor {
  h: number;
  w: number;
  data: Float32Array;
}

export function decodePng(buffer: Buffer): ImageTensor {
  const png = PNG.sync.read(buffer);
  const { width: w, height: h, data: rgba } = png;
  const out = new Float32Array(h * w * 3);
  for (let i = 0; i < h * w; i++) {
    out[i * 3] = rgba[i * 4]! / 255;
    out[i * 3 + 1] = rgba[i * 4 + 1]! / 255;
    out[i * 3 + 2] = rgba[i * 4 + 2]! / 255;
  }
  return { h, w, data: out };
}

export async function loadImage(filePath: string): Promise<ImageTensor> {
  return decodePng(await fs.readFile(filePath));
}

// ------------------------------------------------------------- extractors

export type CanonicalModel = "sam" | "dinov2" | "oneformer" | "mask2former";

/** Fixed record order inside every bundle, whatever the CLI was given. */
export const CANONICAL_ORDER: readonly CanonicalModel[] = [
  "sam",
  "dinov2",
  "oneformer",
  "mask2former",
];

export interface ExtractorSpec {
  id: string;
  /** fallback square input resolution, used when the artifact leaves H/W dynamic */
  inputSize: number;
  /** per-channel normalization in [0, 1] units */
  mean: readonly [number, number, number];
  std: readonly [number, number, number];
  /** directory containing model.json + weight shards */
  modelDir: string;
}

const IMAGENET_MEAN = [0.485, 0.456, 0.406] as const;
const IMAGENET_STD = [0.229, 0.224, 0.225] as const;

/**
 * Preprocessing presets per backbone. Input sizes follow each model's
 * published evaluation resolution; all four normalize with ImageNet
 * statistics. The weight directories themselves are supplied by the user
 * (see README for the source checkpoints and conversion commands).
 */
export function defaultSpecs(modelsRoot: string): Record<CanonicalModel, ExtractorSpec> {
  const spec = (id: CanonicalModel, inputSize: number): ExtractorSpec => ({
    id,
    inputSize,
    mean: IMAGENET_MEAN,
    std: IMAGENET_STD,
    modelDir: path.join(modelsRoot, id),
  });
  return {
    sam: spec("sam", 1024),
    dinov2: spec("dinov2", 518),
    oneformer: spec("oneformer", 512),
    mask2former: spec("mask2former", 512),
  };
}

export interface Extractor {
  id: string;
  embed(img: ImageTensor): Promise<FeatureRecord>;
  dispose(): void;
}

type AnyModel = tf.LayersModel | tf.GraphModel;

/** IOHandler that reads tensorflowjs_converter output from a local directory. */
function dirLoader(modelDir: string): tf.io.IOHandler {
  return {
    load: async () => {
      const jsonPath = path.join(modelDir, "model.json");
      const raw = JSON.parse(await fs.readFile(jsonPath, "utf-8"));
      const manifest: tf.io.WeightsManifestConfig = raw.weightsManifest ?? [];
      const specs: tf.io.WeightsManifestEntry[] = [];
      const shards: Buffer[] = [];
      for (const group of manifest) {
        specs.push(...group.weights);
        for (const rel of group.paths) {
          shards.push(await fs.readFile(path.join(modelDir, rel)));
        }
      }
      const weightData = Buffer.concat(shards);
      return {
        modelTopology: raw.modelTopology,
        format: raw.format,
        generatedBy: raw.generatedBy,
        convertedBy: raw.convertedBy,
        weightSpecs: specs,
        weightData: weightData.buffer.slice(
          weightData.byteOffset,
          weightData.byteOffset + weightData.byteLength,
        ),
      };
    },
  };
}

/** Static (H, W) the artifact itself declares, if any; beats the preset. */
function declaredInputHW(model: AnyModel): [number, number] | null {
  const shape = model.inputs?.[0]?.shape;
  if (!shape || shape.length !== 4) return null;
  const h = shape[1];
  const w = shape[2];
  if (typeof h === "number" && h > 0 && typeof w === "number" && w > 0) {
    return [h, w];
  }
  return null;
}

async function loadModel(spec: ExtractorSpec): Promise<AnyModel> {
  const jsonPath = path.join(spec.modelDir, "model.json");
  let format: string;
  try {
    format = JSON.parse(await fs.readFile(jsonPath, "utf-8")).format ?? "layers-model";
  } catch (err) {
    throw new ModelUnavailableError(
      `weights for '${spec.id}' not found at ${jsonPath} (${(err as Error).message})`,
    );
  }
  try {
    if (format === "graph-model") {
      return await tf.loadGraphModel(dirLoader(spec.modelDir));
    }
    return await tf.loadLayersModel(dirLoader(spec.modelDir));
  } catch (err) {
    throw new ModelUnavailableError(`cannot load '${spec.id}': ${(err as Error).message}`);
  }
}

/** Map a model's outputs to its final spatial grid (see module docstring). */
export function pickGrid(outputs: tf.Tensor[], id: string): tf.Tensor {
  for (let i = outputs.length - 1; i >= 0; i--) {
    if (outputs[i]!.rank === 4) return outputs[i]!;
  }
  for (let i = outputs.length - 1; i >= 0; i--) {
    const t = outputs[i]!;
    if (t.rank !== 3) continue;
    const [b, n, d] = t.shape as [number, number, number];
    const g = Math.round(Math.sqrt(n));
    if (g * g === n) return t.reshape([b, g, g, d]);
    const gc = Math.round(Math.sqrt(n - 1));
    if (gc * gc === n - 1) {
      // token 0 is the class token; the rest form the spatial grid
      return t.slice([0, 1, 0], [b, n - 1, d]).reshape([b, gc, gc, d]);
    }
    throw new ExtractionError(`'${id}' token output has ${n} tokens, not a square grid`);
  }
  throw new ExtractionError(`'${id}' produced no rank-3 or rank-4 output`);
}

/** Load one backbone and wrap it behind the embed() contract. */
export async function loadExtractor(spec: ExtractorSpec): Promise<Extractor> {
  const model = await loadModel(spec);
  const [inH, inW] = declaredInputHW(model) ?? [spec.inputSize, spec.inputSize];
  return {
    id: spec.id,
    async embed(img: ImageTensor): Promise<FeatureRecord> {
      const grid = tf.tidy(() => {
        const raw = tf.tensor3d(img.data, [img.h, img.w, 3]);
        const resized = tf.image.resizeBilinear(raw, [inH, inW]);
        const normed = resized.sub(tf.tensor1d([...spec.mean])).div(tf.tensor1d([...spec.std]));
        const out = model.predict(normed.expandDims(0)) as
          | tf.Tensor
          | tf.Tensor[]
          | Record<string, tf.Tensor>;
        const outputs = Array.isArray(out)
          ? out
          : out instanceof tf.Tensor
            ? [out]
            : Object.values(out);
        const picked = pickGrid(outputs, spec.id);
        return picked.squeeze([0]);
      });
      try {
        const [h, w, c] = grid.shape as [number, number, number];
        const data = new Float32Array(await grid.data());
        return { modelId: spec.id, h, w, c, data };
      } finally {
        grid.dispose();
      }
    },
    dispose() {
      model.dispose();
    },
  };
}
