#!/usr/bin/env node
/**
 * clipseek-export: turn raw video files into clipseek feature binaries.
 *
 * Exit statuses: 0 ok (even if some inputs were skipped, as long as at
 * least one file was written), 2 bad arguments, 3 nothing exported.
 */

import { parseArgs } from "node:util";

import { exportJob } from "./export.js";

function usage(): string {
  return (
    "usage: clipseek-export --out DIR [options] INPUT...\n" +
    "  --out DIR        output directory (required)\n" +
    "  --dim D          feature dimension (default 16)\n" +
    "  --unit-len L     frames per feature unit (default 16)\n" +
    "  --model ID       feature model identifier (default conv3d-v1)\n" +
    "  --fps FPS        override the fps recorded in the output header\n"
  );
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      allowPositionals: true,
      options: {
        out: { type: "string" },
        dim: { type: "string", default: "16" },
        "unit-len": { type: "string", default: "16" },
        model: { type: "string", default: "conv3d-v1" },
        fps: { type: "string" },
      },
    });
  } catch (err) {
    console.error(err instanceof Error ? err.message : String(err));
    console.error(usage());
    return 2;
  }
  const { values, positionals } = parsed;
  const dim = Number(values.dim);
  const unitLen = Number(values["unit-len"]);
  const fps = values.fps === undefined ? undefined : Number(values.fps);
  if (
    !values.out ||
    positionals.length === 0 ||
    !Number.isInteger(dim) ||
    dim < 1 ||
    !Number.isInteger(unitLen) ||
    unitLen < 1 ||
    (fps !== undefined && !(fps > 0))
  ) {
    console.error(usage());
    return 2;
  }
  const result = exportJob({
    inputs: positionals,
    outDir: values.out,
    dim,
    unitLen,
    modelId: values.model!,
    fps,
  });
  console.error(
    `exported ${result.written.length} file(s), skipped ${result.skipped.length}`,
  );
  return result.written.length > 0 ? 0 : 3;
}

if (import.meta.url === `file://${process.argv[1]}`) {
  process.exit(main(process.argv.slice(2)));
}
