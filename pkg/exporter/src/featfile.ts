/**
 * Writer for the clipseek feature binary format.
 *
 * Byte layout (all little-endian):
 *   magic "CSEEK-FEAT-1\n"
 *   u16 id length, id UTF-8 bytes
 *   u32 frame count N, f64 fps, u32 unit length in frames,
 *   u32 unit count U, u32 feature dim D
 *   U * D float32 values, row-major
 */

export const FEAT_MAGIC = Buffer.from("CSEEK-FEAT-1\n", "ascii");

export interface FeatureFile {
  id: string;
  nFrames: number;
  fps: number;
  unitLen: number;
  dim: number;
  /** numUnits * dim values, row-major */
  features: Float32Array;
}

export function encodeFeatureFile(file: FeatureFile): Buffer {
  const numUnits = file.features.length / file.dim;
  if (!Number.isInteger(numUnits)) {
    throw new RangeError(
      `feature length ${file.features.length} is not a multiple of dim ${file.dim}`,
    );
  }
  const idBytes = Buffer.from(file.id, "utf-8");
  const header = Buffer.alloc(2 + idBytes.length + 24);
  let off = header.writeUInt16LE(idBytes.length, 0);
  off += idBytes.copy(header, off);
  off = header.writeUInt32LE(file.nFrames, off);
  off = header.writeDoubleLE(file.fps, off);
  off = header.writeUInt32LE(file.unitLen, off);
  off = header.writeUInt32LE(numUnits, off);
  header.writeUInt32LE(file.dim, off);
  const payload = Buffer.alloc(file.features.length * 4);
  for (let i = 0; i < file.features.length; i++) {
    payload.writeFloatLE(file.features[i], i * 4);
  }
  return Buffer.concat([FEAT_MAGIC, header, payload]);
}
