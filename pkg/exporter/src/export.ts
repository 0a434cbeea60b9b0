import * as fs from "node:fs";
import * as path from "node:path";

import { encodeFeatureFile } from "./featfile.js";
import { buildModel, extractFeatures } from "./features.js";
import { decodeRawVideo, RawFormatError } from "./rawvideo.js";

export interface ExportJob {
  inputs: string[];
  outDir: string;
  unitLen: number;
  dim: number;
  modelId: string;
  /** overrides the fps recorded in the input container when set */
  fps?: number;
  log?: (message: string) => void;
}

export interface ExportResult {
  written: string[];
  skipped: { input: string; reason: string }[];
}

/** Export every input to <outDir>/<video id>.feat.
 *
 * Undecodable inputs are skipped with a logged reason; a failure while
 * writing removes the partial output before moving on.
 */
export function exportJob(job: ExportJob): ExportResult {
  const log = job.log ?? ((m) => console.error(m));
  const model = buildModel(job.modelId, job.dim, job.unitLen);
  fs.mkdirSync(job.outDir, { recursive: true });
  const result: ExportResult = { written: [], skipped: [] };
  for (const input of job.inputs) {
    let outPath: string | undefined;
    try {
      const video = decodeRawVideo(fs.readFileSync(input), input);
      const features = extractFeatures(video, model);
      outPath = path.join(job.outDir, `${video.id}.feat`);
      fs.writeFileSync(
        outPath,
        encodeFeatureFile({
          id: video.id,
          nFrames: video.frames.length,
          fps: job.fps ?? video.fps,
          unitLen: model.unitLen,
          dim: model.dim,
          features,
        }),
      );
      result.written.push(outPath);
    } catch (err) {
      if (outPath) {
        fs.rmSync(outPath, { force: true });
      }
      if (err instanceof RawFormatError || (err as NodeJS.ErrnoException).code) {
        const reason = err instanceof Error ? err.message : String(err);
        log(`skipping ${input}: ${reason}`);
        result.skipped.push({ input, reason });
      } else {
        throw err;
      }
    }
  }
  return result;
}
