import { afterAll, describe, expect, it } from "vitest";
import { promises as fs } from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import * as tf from "@tensorflow/tfjs";
import { PNG } from "pngjs";
import {
  ExtractionError,
  ExtractorSpec,
  ImageTensor,
  ModelUnavailableError,
  decodePng,
  loadExtractor,
  pickGrid,
} from "../src/features.js";

const tmpDirs: string[] = [];
afterAll(async () => {
  for (const d of tmpDirs) await fs.rm(d, { recursive: true, force: true });
});

async function mkdtemp(): Promise<string> {
  const d = await fs.mkdtemp(path.join(os.tmpdir(), "fmx-"));
  tmpDirs.push(d);
  return d;
}

function checkerPng(h: number, w: number): Buffer {
  const png = new PNG({ width: w, height: h });
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const i = (y * w + x) * 4;
      const v = (x + y) % 2 === 0 ? 255 : 40;
      png.data[i] = v;
      png.data[i + 1] = Math.floor(v / 2);
      png.data[i + 2] = 255 - v;
      png.data[i + 3] = 255;
    }
  }
  return PNG.sync.write(png);
}

/** Save a layers model in the tensorflowjs_converter directory layout. */
async function saveModelDir(model: tf.LayersModel, dir: string): Promise<void> {
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const weightData = artifacts.weightData!;
      const parts = Array.isArray(weightData) ? weightData : [weightData];
      const blob = Buffer.concat(parts.map((p) => Buffer.from(p)));
      const json = {
        modelTopology: artifacts.modelTopology,
        format: "layers-model",
        generatedBy: "test",
        convertedBy: "test",
        weightsManifest: [{ paths: ["weights.bin"], weights: artifacts.weightSpecs }],
      };
      await fs.writeFile(path.join(dir, "model.json"), JSON.stringify(json));
      await fs.writeFile(path.join(dir, "weights.bin"), blob);
      return { modelArtifactsInfo: { dateSaved: new Date(), modelTopologyType: "JSON" } };
    }),
  );
}

describe("png decoding", () => {
  it("maps pixels to [0,1] RGB in row-major order", () => {
    const img = decodePng(checkerPng(2, 3));
    expect([img.h, img.w]).toEqual([2, 3]);
    expect(img.data.length).toBe(2 * 3 * 3);
    // (0,0) is the bright checker cell
    expect(img.data[0]).toBeCloseTo(1.0, 6);
    expect(img.data[1]).toBeCloseTo(127 / 255, 6);
    expect(img.data[2]).toBeCloseTo(0.0, 6);
    // (0,1) is the dark cell
    expect(img.data[3]).toBeCloseTo(40 / 255, 6);
  });
});

describe("grid picking", () => {
  it("uses the last rank-4 output even when rank-3 outputs follow", () => {
    const early = tf.zeros([1, 2, 2, 3]);
    const late = tf.ones([1, 4, 4, 5]);
    const tokens = tf.zeros([1, 16, 8]);
    const picked = pickGrid([early, late, tokens], "m");
    expect(picked.shape).toEqual([1, 4, 4, 5]);
    expect(picked).toBe(late);
  });

  it("reshapes square token outputs to a grid", () => {
    const tokens = tf.range(0, 1 * 16 * 2).reshape([1, 16, 2]);
    const picked = pickGrid([tokens], "m");
    expect(picked.shape).toEqual([1, 4, 4, 2]);
    // token k lands at (k / 4, k % 4); channel layout untouched
    const arr = picked.arraySync() as number[][][][];
    expect(arr[0]![1]![2]![0]).toBe(6 * 2); // token 6, channel 0
  });

  it("drops a leading class token when N = g*g + 1", () => {
    const tokens = tf.range(0, 17 * 3).reshape([1, 17, 3]);
    const picked = pickGrid([tokens], "m");
    expect(picked.shape).toEqual([1, 4, 4, 3]);
    const arr = picked.arraySync() as number[][][][];
    expect(arr[0]![0]![0]![0]).toBe(3); // grid starts at token 1
  });

  it("rejects non-square token counts and headless outputs", () => {
    expect(() => pickGrid([tf.zeros([1, 7, 3])], "m")).toThrow(ExtractionError);
    expect(() => pickGrid([tf.zeros([1, 9])], "m")).toThrow(ExtractionError);
  });
});

describe("tfjs extractor", () => {
  it("loads a converter-layout model dir and emits the final spatial grid", async () => {
    const dir = await mkdtemp();
    const model = tf.sequential({
      layers: [
        tf.layers.conv2d({
          inputShape: [8, 8, 3],
          filters: 4,
          kernelSize: 3,
          strides: 2,
          padding: "same",
          activation: "relu",
        }),
      ],
    });
    await saveModelDir(model, dir);
    model.dispose();

    const spec: ExtractorSpec = {
      id: "sam",
      inputSize: 32, // deliberately wrong: the artifact's declared 8x8 must win
      mean: [0.5, 0.5, 0.5],
      std: [0.5, 0.5, 0.5],
      modelDir: dir,
    };
    const extractor = await loadExtractor(spec);
    try {
      const img = decodePng(checkerPng(10, 12)); // non-square input gets resized
      const rec = await extractor.embed(img);
      expect(rec.modelId).toBe("sam");
      expect([rec.h, rec.w, rec.c]).toEqual([4, 4, 4]);
      for (const v of rec.data) expect(Number.isFinite(v)).toBe(true);
      const again = await extractor.embed(img);
      expect(again.data).toEqual(rec.data); // inference is deterministic
    } finally {
      extractor.dispose();
    }
  });

  it("reports missing weights as ModelUnavailableError", async () => {
    const dir = await mkdtemp();
    const spec: ExtractorSpec = {
      id: "dinov2",
      inputSize: 8,
      mean: [0, 0, 0],
      std: [1, 1, 1],
      modelDir: path.join(dir, "nope"),
    };
    await expect(loadExtractor(spec)).rejects.toBeInstanceOf(ModelUnavailableError);
  });
});
