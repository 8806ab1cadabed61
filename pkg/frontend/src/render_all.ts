/**
 * Render every figure family from a topolab experiment directory.
 *
 * Usage: node dist/src/render_all.js <experiment-or-fixture-dir> <out-dir>
 *
 * The input directory holds manifest.json, provenance.json and
 * analysis/<family>.csv as produced by `topolab analyze`. Families whose
 * inputs are missing are listed as gaps on the index page; rendering is
 * read-only over the inputs and byte-deterministic.
 */

import { readFileSync, mkdirSync, writeFileSync, existsSync } from "node:fs";
import { join } from "node:path";

import { MetricRow, parseMetricTable } from "./csv.js";
import { FIGURE_FAMILIES, Manifest, ReportInput } from "./figures.js";
import { esc } from "./svg.js";

const TABLE_FILES = ["rsm", "noise", "entropy", "topo", "retino", "calib", "ed"];

export function loadInput(dir: string): { input: ReportInput; provenance: string | null } {
  let manifest: Manifest | null = null;
  const manifestPath = join(dir, "manifest.json");
  if (existsSync(manifestPath)) {
    manifest = JSON.parse(readFileSync(manifestPath, "utf-8")) as Manifest;
  }
  const tables = new Map<string, MetricRow[]>();
  for (const name of TABLE_FILES) {
    const path = join(dir, "analysis", `${name}.csv`);
    if (existsSync(path)) {
      tables.set(name, parseMetricTable(readFileSync(path, "utf-8"), `${name}.csv`));
    }
  }
  let provenance: string | null = null;
  const provPath = join(dir, "provenance.json");
  if (existsSync(provPath)) provenance = readFileSync(provPath, "utf-8");
  return { input: { manifest, tables }, provenance };
}

export interface RenderResult {
  rendered: Array<{ id: string; title: string; file: string }>;
  gaps: Array<{ id: string; missing: string[] }>;
}

export function renderAll(inputDir: string, outDir: string): RenderResult {
  const { input, provenance } = loadInput(inputDir);
  mkdirSync(outDir, { recursive: true });

  const result: RenderResult = { rendered: [], gaps: [] };
  for (const fam of FIGURE_FAMILIES) {
    const missing = fam.needs.filter((n) =>
      n === "manifest" ? input.manifest === null : !input.tables.has(n));
    if (missing.length > 0) {
      result.gaps.push({ id: fam.id, missing });
      continue;
    }
    const body = fam.render(input);
    const file = `${fam.id}.svg`;
    writeFileSync(join(outDir, file), body);
    result.rendered.push({ id: fam.id, title: fam.title, file });
  }
  writeFileSync(join(outDir, "index.html"), indexPage(inputDir, result, provenance));
  return result;
}

function indexPage(inputDir: string, result: RenderResult, provenance: string | null): string {
  const figures = result.rendered
    .map((r) => `  <section>\n    <h2>${esc(r.title)}</h2>\n    <img src="${esc(r.file)}" alt="${esc(r.id)}"/>\n  </section>`)
    .join("\n");
  const gaps = result.gaps.length
    ? `  <section>\n    <h2>Missing analyses</h2>\n    <ul>\n` +
      result.gaps.map((g) => `      <li><code>${esc(g.id)}</code> needs: ${esc(g.missing.join(", "))}</li>`).join("\n") +
      `\n    </ul>\n  </section>`
    : "";
  const prov = provenance
    ? `  <section>\n    <h2>Provenance</h2>\n    <pre>${esc(provenance)}</pre>\n  </section>`
    : "";
  return `<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8"/>
<title>topolab report</title>
<style>
body { font-family: sans-serif; max-width: 1500px; margin: 1em auto; padding: 0 1em; }
img { max-width: 100%; border: 1px solid #ddd; }
pre { background: #f6f6f6; padding: 0.8em; overflow-x: auto; }
</style>
</head>
<body>
<h1>topolab report</h1>
<p>Rendered from <code>${esc(inputDir)}</code>: ${result.rendered.length} figure families, ${result.gaps.length} gaps.</p>
${figures}
${gaps}
${prov}
</body>
</html>
`;
}

function main(argv: string[]): number {
  if (argv.length < 2) {
    console.error("usage: render_all.js <experiment-dir> <out-dir>");
    return 2;
  }
  const [inputDir, outDir] = argv;
  if (!existsSync(inputDir)) {
    console.error(`error: input directory does not exist: ${inputDir}`);
    return 2;
  }
  const result = renderAll(inputDir, outDir);
  console.log(`${result.rendered.length} figures rendered to ${outDir}` +
    (result.gaps.length ? `, ${result.gaps.length} gaps (see index.html)` : ""));
  return 0;
}

if (process.argv[1] && process.argv[1].endsWith("render_all.js")) {
  process.exit(main(process.argv.slice(2)));
}
