/**
 * Figure-family renderers over the metric tables.
 *
 * Every renderer is a pure function of its input rows; output SVGs are
 * byte-stable across runs. A family whose backing table is absent is a
 * gap (reported on the index page); a present table with no matching
 * rows renders an annotated empty figure.
 */

import { MetricRow, conditionsOf, meanOverSeeds, pick } from "./csv.js";
import { CYCLE_COLORS, colorFor, formatNumber, labelFor } from "./colors.js";
import * as svg from "./svg.js";

export interface ManifestEntry {
  model_id: string;
  spec: { arch: string; constraint: string; lam: number; seed: number };
  test_acc: number;
  train_acc: number;
}

export interface Manifest {
  experiment: string;
  checkpoints: ManifestEntry[];
}

export interface ReportInput {
  manifest: Manifest | null;
  tables: Map<string, MetricRow[]>;
}

export interface FigureSpec {
  id: string;
  title: string;
  needs: string[]; // table names, or "manifest"
  render: (input: ReportInput) => string;
}

function emptyFigure(title: string, note: string): string {
  const body = `<text x="360" y="22" text-anchor="middle" class="title">${svg.esc(title)}</text>` +
    `<text x="360" y="200" text-anchor="middle" class="note">${svg.esc(note)}</text>`;
  return svg.document(720, 400, body);
}

type Cond = { constraint: string; lam: number };

/** Multi-line chart: one line per (constraint, lam), numeric x from param. */
function lineChart(opts: {
  title: string; xLabel: string; yLabel: string;
  rows: MetricRow[]; metric: string;
  xOf: (r: MetricRow) => number;
  filter?: (r: MetricRow) => boolean;
}): string {
  const rows = rows_of();
  function rows_of(): MetricRow[] {
    return opts.rows.filter((r) => r.metric === opts.metric && (!opts.filter || opts.filter(r)));
  }
  if (rows.length === 0) return emptyFigure(opts.title, `no ${opts.metric} rows in the inputs`);

  const conds = conditionsOf(rows);
  const series: Array<{ cond: Cond; pts: Array<[number, number]> }> = [];
  for (const cond of conds) {
    const byX = new Map<number, MetricRow[]>();
    for (const r of rows) {
      if (r.constraint !== cond.constraint || Math.abs(r.lam - cond.lam) > 1e-9) continue;
      const x = opts.xOf(r);
      const list = byX.get(x) ?? [];
      list.push(r);
      byX.set(x, list);
    }
    const pts = [...byX.entries()]
      .sort((a, b) => a[0] - b[0])
      .map(([x, list]) => [x, meanOverSeeds(list).mean] as [number, number]);
    if (pts.length) series.push({ cond, pts });
  }
  const xs = series.flatMap((s) => s.pts.map((p) => p[0]));
  const ys = series.flatMap((s) => s.pts.map((p) => p[1]));
  const pad = (Math.max(...ys) - Math.min(...ys) || 1) * 0.08;
  const f = svg.makeFrame({
    xMin: Math.min(...xs), xMax: Math.max(...xs),
    yMin: Math.min(...ys) - pad, yMax: Math.max(...ys) + pad,
  });
  const parts = [svg.axes(f, opts.title, opts.xLabel, opts.yLabel)];
  for (const s of series) {
    const color = colorFor(s.cond.constraint, s.cond.lam);
    parts.push(svg.polyline(f, s.pts, color));
    parts.push(svg.dots(f, s.pts, color));
  }
  parts.push(svg.legend(f, series.map((s) => ({
    label: labelFor(s.cond.constraint, s.cond.lam),
    color: colorFor(s.cond.constraint, s.cond.lam),
  }))));
  return svg.document(f.width, f.height, parts.join("\n"));
}

/** Grouped bars over (constraint, lam) conditions with sd whiskers. */
function conditionBars(opts: {
  title: string; yLabel: string; rows: MetricRow[]; metric: string; param1?: string;
}): string {
  const rows = pick(opts.rows, opts.metric, opts.param1 ? { param1: opts.param1 } : {});
  if (rows.length === 0) return emptyFigure(opts.title, `no ${opts.metric} rows in the inputs`);
  const conds = conditionsOf(rows);
  const stats = conds.map((cond) => {
    const sub = rows.filter((r) => r.constraint === cond.constraint && Math.abs(r.lam - cond.lam) < 1e-9);
    return { cond, ...meanOverSeeds(sub) };
  });
  const ys = stats.flatMap((s) => [s.mean + (s.sd ?? 0), s.mean - (s.sd ?? 0), 0]);
  const pad = (Math.max(...ys) - Math.min(...ys) || 1) * 0.1;
  const f = svg.makeFrame({
    xMin: 0, xMax: stats.length,
    yMin: Math.min(...ys) - pad, yMax: Math.max(...ys) + pad,
    bottom: 66,
  });
  const xLabels = stats.map((s, i) => ({ v: i + 0.5, label: labelFor(s.cond.constraint, s.cond.lam) }));
  const parts: string[] = [];
  parts.push(svg.axes(f, opts.title, "", opts.yLabel, []));
  for (const [i, s] of stats.entries()) {
    parts.push(svg.bar(f, i + 0.18, 0.64, s.mean, colorFor(s.cond.constraint, s.cond.lam)));
    if (s.sd !== null) parts.push(svg.errorBar(f, i + 0.5, s.mean, s.sd));
  }
  for (const { v, label } of xLabels) {
    const px = svg.xPix(f, v);
    const py = f.height - f.bottom + 12;
    parts.push(`<text x="${svg.fmt(px)}" y="${py}" text-anchor="end" class="tick" transform="rotate(-35 ${svg.fmt(px)} ${py})">${svg.esc(label)}</text>`);
  }
  return svg.document(f.width, f.height, parts.join("\n"));
}

// --------------------------------------------------------------------------
// family renderers
// --------------------------------------------------------------------------

function renderAccuracy(input: ReportInput): string {
  const entries = input.manifest?.checkpoints ?? [];
  if (entries.length === 0) return emptyFigure("Test accuracy vs lambda", "manifest lists no checkpoints");
  const rows: MetricRow[] = entries.map((e) => ({
    model_id: e.model_id, constraint: e.spec.constraint, lam: e.spec.lam,
    seed: e.spec.seed, metric: "test_acc", param1: "", param2: "", value: e.test_acc,
  }));
  const constraints = [...new Set(rows.map((r) => r.constraint))].sort();
  const series = constraints.map((c) => {
    const byLam = new Map<number, MetricRow[]>();
    for (const r of rows) if (r.constraint === c) {
      const list = byLam.get(r.lam) ?? [];
      list.push(r);
      byLam.set(r.lam, list);
    }
    return {
      constraint: c,
      pts: [...byLam.entries()].sort((a, b) => a[0] - b[0])
        .map(([lam, list]) => [lam, meanOverSeeds(list).mean] as [number, number]),
    };
  });
  const ys = series.flatMap((s) => s.pts.map((p) => p[1]));
  const xs = series.flatMap((s) => s.pts.map((p) => p[0]));
  const pad = (Math.max(...ys) - Math.min(...ys) || 0.02) * 0.15;
  const f = svg.makeFrame({ xMin: 0, xMax: Math.max(...xs, 1), yMin: Math.min(...ys) - pad, yMax: Math.max(...ys) + pad });
  const parts = [svg.axes(f, "Test accuracy vs spatial weight", "lambda", "test accuracy")];
  for (const s of series) {
    const color = colorFor(s.constraint, 3);
    if (s.pts.length > 1) parts.push(svg.polyline(f, s.pts, color));
    else {
      // control has a single lambda: draw a reference line across the panel
      const y = s.pts[0][1];
      parts.push(svg.polyline(f, [[f.xMin, y], [f.xMax, y]], color));
    }
    parts.push(svg.dots(f, s.pts, color));
  }
  parts.push(svg.legend(f, series.map((s) => ({
    label: s.constraint === "none" ? "control" : s.constraint,
    color: colorFor(s.constraint, 3),
  }))));
  return svg.document(f.width, f.height, parts.join("\n"));
}

function renderPanelRow(panels: string[], width: number, height: number): string {
  // panels are full SVG documents; strip the outer tag and translate
  const bodies = panels.map((p) => p.replace(/^[\s\S]*?<rect[^>]*fill="white"\/>\n/, "").replace(/<\/svg>\n?$/, ""));
  const w = width * panels.length;
  const inner = bodies
    .map((b, i) => `<g transform="translate(${i * width} 0)">${b}</g>`)
    .join("\n");
  const style = panels[0].match(/<style>[\s\S]*?<\/style>/)?.[0] ?? "";
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${w}" height="${height}" viewBox="0 0 ${w} ${height}">
${style}
<rect width="${w}" height="${height}" fill="white"/>
${inner}
</svg>
`;
}

function renderNoise(input: ReportInput): string {
  const rows = input.tables.get("noise") ?? [];
  const kinds = ["white", "pink", "salt_pepper"];
  const panels = kinds.map((kind) =>
    lineChart({
      title: `${kind.replace("_", "-")} noise`, xLabel: "intensity",
      yLabel: "normalized accuracy",
      rows, metric: "noise_normalized_accuracy",
      xOf: (r) => Number(r.param2),
      filter: (r) => r.param1 === kind,
    }));
  return renderPanelRow(panels, 720, 400);
}

function renderCorrelationHists(input: ReportInput): string {
  const rows = input.tables.get("topo") ?? [];
  const panels = [
    { metric: "weight_neighbor_corr_hist", title: "Neighbor in-weight correlations" },
    { metric: "activation_neighbor_corr_hist", title: "Neighbor activation correlations" },
    { metric: "activation_pair_corr_hist", title: "All-pairs activation correlations" },
  ].map(({ metric, title }) =>
    lineChart({
      title, xLabel: "Pearson r", yLabel: "count",
      rows, metric, xOf: (r) => Number(r.param1),
    }));
  return renderPanelRow(panels, 720, 400);
}

function renderHarmonicGrids(input: ReportInput): string {
  const rows = pick(input.tables.get("retino") ?? [], "dominant_cycle");
  if (rows.length === 0) return emptyFigure("Dominant harmonic maps", "no dominant_cycle rows in the inputs");
  const models = [...new Set(rows.map((r) => r.model_id))].sort();
  const cell = 14;
  const gridPx = cell * 11;
  const perRow = Math.max(1, Math.floor(720 / (gridPx + 30)));
  const nRows = Math.ceil(models.length / perRow);
  const width = 720;
  const height = 40 + nRows * (gridPx + 42);
  const parts: string[] = [
    `<text x="${width / 2}" y="20" text-anchor="middle" class="title">Dominant harmonic per grid unit (cycles 1–5; gray = flat)</text>`,
  ];
  models.forEach((mid, m) => {
    const ox = 20 + (m % perRow) * (gridPx + 30);
    const oy = 40 + Math.floor(m / perRow) * (gridPx + 42);
    const sub = rows.filter((r) => r.model_id === mid);
    for (const r of sub) {
      const unit = Number(r.param1);
      const row = Math.floor(unit / 11);
      const col = unit % 11;
      const color = CYCLE_COLORS[Math.round(r.value)] ?? "rgb(0,0,0)";
      parts.push(`<rect x="${ox + col * cell}" y="${oy + row * cell}" width="${cell - 1}" height="${cell - 1}" fill="${color}"/>`);
    }
    parts.push(`<text x="${ox + gridPx / 2}" y="${oy + gridPx + 14}" text-anchor="middle" class="tick">${svg.esc(mid)}</text>`);
  });
  return svg.document(width, height, parts.join("\n"));
}

function renderCycleBars(input: ReportInput): string {
  const rows = input.tables.get("retino") ?? [];
  const panels = ["1", "2", "3", "4", "5"].map((cycle) =>
    conditionBars({
      title: `cycle=${cycle} proportion`, yLabel: "fraction of units",
      rows, metric: "cycle_proportion", param1: cycle,
    }));
  return renderPanelRow(panels.slice(0, 5), 720, 400);
}

function renderEccentricity(input: ReportInput): string {
  const rows = input.tables.get("retino") ?? [];
  const panels = ["increasing", "decreasing", "bandpass", "flat"].map((label) =>
    conditionBars({
      title: `${label} eccentricity profiles`, yLabel: "fraction of units",
      rows, metric: "ecc_proportion", param1: label,
    }));
  return renderPanelRow(panels, 720, 400);
}

function renderCalibration(input: ReportInput): string {
  const rows = input.tables.get("calib") ?? [];
  const panels = [
    conditionBars({ title: "Expected calibration error", yLabel: "ECE", rows, metric: "ece" }),
    conditionBars({ title: "Mean top1-top2 logit gap", yLabel: "logits", rows, metric: "logit_gap" }),
  ];
  return renderPanelRow(panels, 720, 400);
}

function renderEd(input: ReportInput): string {
  const rows = input.tables.get("ed") ?? [];
  const panels = [
    { p1: "fc1_weights", title: "ED of fc1 weights" },
    { p1: "activations", title: "ED of test-set activations" },
  ].map(({ p1, title }) =>
    lineChart({
      title, xLabel: "lambda", yLabel: "effective dimensionality",
      rows: rows.filter((r) => r.param1 === p1).map((r) => ({ ...r, param1: formatNumber(r.lam) })),
      metric: "effective_dimensionality",
      xOf: (r) => r.lam,
    }));
  return renderPanelRow(panels, 720, 400);
}

function renderColocalization(input: ReportInput): string {
  const rows = input.tables.get("topo") ?? [];
  return lineChart({
    title: "Mean distance between co-activated units", xLabel: "correlation threshold alpha",
    yLabel: "mean grid distance",
    rows, metric: "colocalization_distance",
    xOf: (r) => Number(r.param1),
  });
}

export const FIGURE_FAMILIES: FigureSpec[] = [
  { id: "accuracy", title: "Test accuracy vs lambda", needs: ["manifest"], render: renderAccuracy },
  {
    id: "soi", title: "Representational stability under weight noise", needs: ["rsm"],
    render: (input) => lineChart({
      title: "Second-order isomorphism vs weight-noise level", xLabel: "sigma (x sd of W)",
      yLabel: "SOI", rows: input.tables.get("rsm") ?? [], metric: "soi",
      xOf: (r) => Number(r.param1),
    }),
  },
  {
    id: "accuracy-drop", title: "Accuracy drop under weight noise", needs: ["rsm"],
    render: (input) => lineChart({
      title: "Accuracy drop vs weight-noise level", xLabel: "sigma (x sd of W)",
      yLabel: "drop (percentage points)", rows: input.tables.get("rsm") ?? [],
      metric: "perturbed_accuracy_drop_pp", xOf: (r) => Number(r.param1),
    }),
  },
  { id: "noise-robustness", title: "Accuracy under image noise", needs: ["noise"], render: renderNoise },
  {
    id: "entropy", title: "Unit entropy", needs: ["entropy"],
    render: (input) => conditionBars({
      title: "Grid-mean unit entropy (pre-ReLU)", yLabel: "entropy (nats)",
      rows: input.tables.get("entropy") ?? [], metric: "entropy_grid_mean",
    }),
  },
  {
    id: "poz", title: "Percentage of zero activations", needs: ["entropy"],
    render: (input) => conditionBars({
      title: "Grid-mean PoZ (post-ReLU)", yLabel: "fraction zero",
      rows: input.tables.get("entropy") ?? [], metric: "poz_grid_mean",
    }),
  },
  { id: "colocalization", title: "Functional co-localization", needs: ["topo"], render: renderColocalization },
  {
    id: "morans", title: "Spatial smoothness (Moran's I)", needs: ["topo"],
    render: (input) => conditionBars({
      title: "Moran's I of fc1 activation maps", yLabel: "Moran's I",
      rows: input.tables.get("topo") ?? [], metric: "morans_i",
    }),
  },
  { id: "correlation-histograms", title: "Correlation distributions", needs: ["topo"], render: renderCorrelationHists },
  { id: "ed", title: "Effective dimensionality", needs: ["ed"], render: renderEd },
  { id: "harmonic-grid", title: "Dominant harmonic maps", needs: ["retino"], render: renderHarmonicGrids },
  { id: "cycle-bars", title: "Harmonic cycle proportions", needs: ["retino"], render: renderCycleBars },
  { id: "eccentricity", title: "Eccentricity profile classes", needs: ["retino"], render: renderEccentricity },
  { id: "calibration", title: "Calibration", needs: ["calib"], render: renderCalibration },
];
