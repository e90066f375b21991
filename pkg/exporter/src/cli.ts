#!/usr/bin/env node
/**
 * fm-export: write DFOM teacher bundles for a folder of PNG images.
 *
 * Exit codes: 0 everything exported, 1 any skip or failure, 2 bad usage.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { CANONICAL_ORDER, CanonicalModel } from "./features.js";
import { ConfigError, canonicalModels, exportImages } from "./export.js";

async function main(): Promise<number> {
  const argv = await yargs(hideBin(process.argv))
    .command("export", "run backbones over an image folder", (y) =>
      y
        .option("images", { type: "string", demandOption: true, describe: "input PNG folder" })
        .option("out", { type: "string", demandOption: true, describe: "output folder" })
        .option("models", {
          type: "string",
          default: CANONICAL_ORDER.join(","),
          describe: "comma-separated subset of: " + CANONICAL_ORDER.join(","),
        })
        .option("models-root", {
          type: "string",
          default: "models",
          describe: "directory holding <model>/model.json weight trees",
        }),
    )
    .demandCommand(1, "specify a command (export)")
    .strict()
    .help()
    .fail((msg, err) => {
      process.stderr.write((msg ?? String(err)) + "\n");
      process.exit(2);
    })
    .parse();

  if (argv._[0] !== "export") {
    process.stderr.write(`unknown command '${argv._[0]}'\n`);
    return 2;
  }
  let models: CanonicalModel[];
  try {
    models = canonicalModels(String(argv.models).split(",").map((s) => s.trim()).filter(Boolean));
  } catch (err) {
    if (err instanceof ConfigError) {
      process.stderr.write(err.message + "\n");
      return 2;
    }
    throw err;
  }

  let manifest;
  try {
    manifest = await exportImages({
      imageDir: String(argv.images),
      outDir: String(argv.out),
      models,
      modelsRoot: String(argv["models-root"]),
    });
  } catch (err) {
    if (err instanceof ConfigError) {
      process.stderr.write(err.message + "\n");
      return 2;
    }
    throw err;
  }

  for (const m of manifest.models) {
    const note = m.status === "skipped" ? `  (${m.reason})` : "";
    process.stdout.write(`model ${m.id}: ${m.status}${note}\n`);
  }
  const exported = manifest.images.filter((i) => i.status === "exported").length;
  process.stdout.write(`exported ${exported}/${manifest.images.length} images to ${manifest.outDir}\n`);
  for (const img of manifest.images) {
    if (img.status === "failed") {
      process.stdout.write(`  failed ${img.image}: ${img.reason}\n`);
    }
  }
  const clean =
    manifest.models.every((m) => m.status === "loaded") &&
    manifest.images.every((i) => i.status === "exported");
  return clean ? 0 : 1;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(String(err?.stack ?? err) + "\n");
    process.exit(1);
  },
);
