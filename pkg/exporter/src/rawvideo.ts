/**
 * Uncompressed grayscale video container, the exporter's input format.
 *
 * Byte layout (all integers little-endian):
 *   magic "CSEEK-RAWV-1\n"
 *   u16 id length, id UTF-8 bytes
 *   u32 frame count N, f64 fps, u32 width, u32 height
 *   N * height * width u8 pixel values, frame-major, row-major per frame
 */

export const RAW_MAGIC = Buffer.from("CSEEK-RAWV-1\n", "ascii");

export interface RawVideo {
  id: string;
  fps: number;
  width: number;
  height: number;
  /** length nFrames, each a row-major width*height buffer */
  frames: Uint8Array[];
}

export class RawFormatError extends Error {}

export function encodeRawVideo(video: RawVideo): Buffer {
  const idBytes = Buffer.from(video.id, "utf-8");
  const header = Buffer.alloc(2 + idBytes.length + 20);
  let off = header.writeUInt16LE(idBytes.length, 0);
  off += idBytes.copy(header, off);
  off = header.writeUInt32LE(video.frames.length, off);
  off = header.writeDoubleLE(video.fps, off);
  off = header.writeUInt32LE(video.width, off);
  header.writeUInt32LE(video.height, off);
  return Buffer.concat([RAW_MAGIC, header, ...video.frames.map(Buffer.from)]);
}

export function decodeRawVideo(buf: Buffer, source = "<buffer>"): RawVideo {
  if (!buf.subarray(0, RAW_MAGIC.length).equals(RAW_MAGIC)) {
    throw new RawFormatError(`${source}: not a raw video file (bad magic)`);
  }
  let off = RAW_MAGIC.length;
  if (buf.length < off + 2) {
    throw new RawFormatError(`${source}: truncated header`);
  }
  const idLen = buf.readUInt16LE(off);
  off += 2;
  if (buf.length < off + idLen + 20) {
    throw new RawFormatError(`${source}: truncated header`);
  }
  const id = buf.subarray(off, off + idLen).toString("utf-8");
  off += idLen;
  const nFrames = buf.readUInt32LE(off);
  const fps = buf.readDoubleLE(off + 4);
  const width = buf.readUInt32LE(off + 12);
  const height = buf.readUInt32LE(off + 16);
  off += 20;
  if (width === 0 || height === 0 || !(fps > 0)) {
    throw new RawFormatError(
      `${source}: invalid dimensions ${width}x${height} @ ${fps} fps`,
    );
  }
  const frameBytes = width * height;
  if (buf.length !== off + nFrames * frameBytes) {
    throw new RawFormatError(
      `${source}: payload is ${buf.length - off} bytes, ` +
        `expected ${nFrames * frameBytes}`,
    );
  }
  const frames: Uint8Array[] = [];
  for (let i = 0; i < nFrames; i++) {
    frames.push(new Uint8Array(buf.subarray(off, off + frameBytes)));
    off += frameBytes;
  }
  return { id, fps, width, height, frames };
}
