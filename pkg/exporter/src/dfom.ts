/**
 * DFOM bundle codec.
 *
 * One bundle file holds the feature grids several vision backbones produced
 * for a single image. The layout is deliberately dumb so any language can
 * write it bit-exactly:
 *
 *   "DFOM"                     4 ASCII bytes
 *   version       u32 LE       currently 1
 *   record count  u32 LE       >= 1
 *   per record:
 *     id length   u32 LE       1..64 bytes
 *     model id    UTF-8
 *     H, W, C     3 x u32 LE   each >= 1
 *     payload     H*W*C f32 LE, channel-major: ch, then row, then col
 *
 * Consumers load these bundles with zero tolerance, so the writer must not
 * take shortcuts: payloads are raw IEEE-754 bits, never re-encoded floats.
 */

import { promises as fs } from "node:fs";
import * as path from "node:path";
import * as crypto from "node:crypto";

export const DFOM_MAGIC = "DFOM";
export const DFOM_VERSION = 1;
export const MAX_MODEL_ID_BYTES = 64;

/** One backbone's feature grid; data is (H, W, C) interleaved row-major. */
export interface FeatureRecord {
  modelId: string;
  h: number;
  w: number;
  c: number;
  /** length h*w*c, index (y*w + x)*c + ch */
  data: Float32Array;
}

export class BundleFormatError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "BundleFormatError";
  }
}

function checkRecord(rec: FeatureRecord): void {
  const idBytes = Buffer.byteLength(rec.modelId, "utf-8");
  if (idBytes === 0 || idBytes > MAX_MODEL_ID_BYTES) {
    throw new BundleFormatError(
      `model id '${rec.modelId}' must be 1..${MAX_MODEL_ID_BYTES} UTF-8 bytes`,
    );
  }
  for (const [axis, dim] of [["h", rec.h], ["w", rec.w], ["c", rec.c]] as const) {
    if (!Number.isInteger(dim) || dim < 1) {
      throw new BundleFormatError(`record '${rec.modelId}' has invalid ${axis}=${dim}`);
    }
  }
  if (rec.data.length !== rec.h * rec.w * rec.c) {
    throw new BundleFormatError(
      `record '${rec.modelId}' payload has ${rec.data.length} values, expected ${rec.h * rec.w * rec.c}`,
    );
  }
  for (let i = 0; i < rec.data.length; i++) {
    const v = rec.data[i]!;
    if (!Number.isFinite(v)) {
      throw new BundleFormatError(`record '${rec.modelId}' contains non-finite values`);
    }
  }
}

/** Serialize records in order. Inverse of decodeBundle. */
export function encodeBundle(records: readonly FeatureRecord[]): Buffer {
  if (records.length === 0) {
    throw new BundleFormatError("a bundle must contain at least one record");
  }
  for (const rec of records) checkRecord(rec);

  let size = 4 + 4 + 4;
  for (const rec of records) {
    size += 4 + Buffer.byteLength(rec.modelId, "utf-8") + 12 + rec.data.length * 4;
  }
  const buf = Buffer.allocUnsafe(size);
  let off = 0;
  buf.write(DFOM_MAGIC, off, "ascii");
  off += 4;
  off = buf.writeUInt32LE(DFOM_VERSION, off);
  off = buf.writeUInt32LE(records.length, off);
  for (const rec of records) {
    const idBytes = Buffer.from(rec.modelId, "utf-8");
    off = buf.writeUInt32LE(idBytes.length, off);
    off += idBytes.copy(buf, off);
    off = buf.writeUInt32LE(rec.h, off);
    off = buf.writeUInt32LE(rec.w, off);
    off = buf.writeUInt32LE(rec.c, off);
    // (H, W, C) -> channel-major (C, H, W), raw bits via the typed array
    const { h, w, c, data } = rec;
    for (let ch = 0; ch < c; ch++) {
      for (let y = 0; y < h; y++) {
        const rowBase = y * w * c + ch;
        for (let x = 0; x < w; x++) {
          buf.writeFloatLE(data[rowBase + x * c]!, off);
          off += 4;
        }
      }
    }
  }
  return buf;
}

function readU32(buf: Buffer, off: number, what: string): [number, number] {
  if (off + 4 > buf.length) {
    throw new BundleFormatError(`truncated bundle: missing ${what}`);
  }
  return [buf.readUInt32LE(off), off + 4];
}

/** Parse a bundle buffer; validates exactly what the training-side loader does. */
export function decodeBundle(buf: Buffer): FeatureRecord[] {
  if (buf.length < 4 || buf.toString("ascii", 0, 4) !== DFOM_MAGIC) {
    throw new BundleFormatError("bad magic: not a DFOM bundle");
  }
  let off = 4;
  let version: number, count: number;
  [version, off] = readU32(buf, off, "version");
  if (version !== DFOM_VERSION) {
    throw new BundleFormatError(`unsupported bundle version ${version}`);
  }
  [count, off] = readU32(buf, off, "record count");
  if (count === 0) throw new BundleFormatError("bundle contains no records");

  const records: FeatureRecord[] = [];
  for (let i = 0; i < count; i++) {
    let idLen: number;
    [idLen, off] = readU32(buf, off, `model_id length of record ${i}`);
    if (idLen === 0 || idLen > MAX_MODEL_ID_BYTES) {
      throw new BundleFormatError(`record ${i} has invalid model_id length ${idLen}`);
    }
    if (off + idLen > buf.length) {
      throw new BundleFormatError(`truncated bundle: model_id of record ${i}`);
    }
    const idRaw = buf.subarray(off, off + idLen);
    let modelId: string;
    try {
      modelId = new TextDecoder("utf-8", { fatal: true }).decode(idRaw);
    } catch {
      throw new BundleFormatError(`record ${i} model_id is not valid UTF-8`);
    }
    off += idLen;
    const dims: number[] = [];
    for (const axis of ["height", "width", "channels"]) {
      let dim: number;
      [dim, off] = readU32(buf, off, `${axis} of '${modelId}'`);
      if (dim === 0) {
        throw new BundleFormatError(`record '${modelId}' has zero ${axis}`);
      }
      dims.push(dim);
    }
    const [h, w, c] = dims as [number, number, number];
    const numel = h * w * c;
    if (off + numel * 4 > buf.length) {
      throw new BundleFormatError(`truncated bundle: payload of '${modelId}'`);
    }
    const data = new Float32Array(numel);
    for (let ch = 0; ch < c; ch++) {
      for (let y = 0; y < h; y++) {
        const rowBase = y * w * c + ch;
        for (let x = 0; x < w; x++) {
          const v = buf.readFloatLE(off);
          off += 4;
          if (!Number.isFinite(v)) {
            throw new BundleFormatError(`record '${modelId}' contains non-finite values`);
          }
          data[rowBase + x * c] = v;
        }
      }
    }
    records.push({ modelId, h, w, c, data });
  }
  if (off !== buf.length) {
    throw new BundleFormatError(`${buf.length - off} trailing bytes after last record`);
  }
  return records;
}

/**
 * Write a bundle atomically: encode to a temp file in the target directory,
 * then rename over the destination, so readers never observe a partial file.
 */
export async function writeBundle(
  records: readonly FeatureRecord[],
  filePath: string,
): Promise<void> {
  const blob = encodeBundle(records);
  const dir = path.dirname(filePath) || ".";
  const tmp = path.join(dir, `.${crypto.randomBytes(8).toString("hex")}.dfom.tmp`);
  try {
    await fs.writeFile(tmp, blob);
    await fs.rename(tmp, filePath);
  } catch (err) {
    await fs.rm(tmp, { force: true });
    throw err;
  }
}

/** Read and parse a bundle file. */
export async function readBundle(filePath: string): Promise<FeatureRecord[]> {
  return decodeBundle(await fs.readFile(filePath));
}
