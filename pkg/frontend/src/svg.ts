/**
 * Minimal SVG assembly: a plot frame with linear axes, plus line, bar,
 * and cell primitives. No timestamps, no randomness — output depends only
 * on the inputs.
 */

export function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function fmt(v: number): string {
  if (!Number.isFinite(v)) return "0";
  const s = v.toFixed(2);
  return s.replace(/\.?0+$/, "") || "0";
}

export interface Frame {
  width: number;
  height: number;
  left: number;
  right: number;
  top: number;
  bottom: number;
  xMin: number;
  xMax: number;
  yMin: number;
  yMax: number;
}

export function makeFrame(opts: Partial<Frame> & { xMin: number; xMax: number; yMin: number; yMax: number }): Frame {
  const f: Frame = {
    width: 720, height: 400, left: 62, right: 18, top: 30, bottom: 44,
    ...opts,
  };
  if (f.xMax === f.xMin) f.xMax = f.xMin + 1;
  if (f.yMax === f.yMin) f.yMax = f.yMin + 1;
  return f;
}

export function xPix(f: Frame, x: number): number {
  return f.left + ((x - f.xMin) / (f.xMax - f.xMin)) * (f.width - f.left - f.right);
}

export function yPix(f: Frame, y: number): number {
  return f.height - f.bottom - ((y - f.yMin) / (f.yMax - f.yMin)) * (f.height - f.top - f.bottom);
}

export function ticks(min: number, max: number, count = 5): number[] {
  const span = max - min;
  const rawStep = span / count;
  const mag = Math.pow(10, Math.floor(Math.log10(rawStep)));
  const step = [1, 2, 2.5, 5, 10].map((m) => m * mag).find((s) => span / s <= count + 1) ?? mag * 10;
  const start = Math.ceil(min / step) * step;
  const out: number[] = [];
  for (let v = start; v <= max + step * 1e-9; v += step) out.push(Math.round(v * 1e9) / 1e9);
  return out;
}

export function axes(f: Frame, title: string, xLabel: string, yLabel: string,
                     xTickVals?: Array<{ v: number; label: string }>): string {
  const parts: string[] = [];
  const x0 = f.left, x1 = f.width - f.right, y0 = f.height - f.bottom, y1 = f.top;
  parts.push(`<text x="${f.width / 2}" y="18" text-anchor="middle" class="title">${esc(title)}</text>`);
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" class="axis"/>`);
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" class="axis"/>`);
  const xt = xTickVals ?? ticks(f.xMin, f.xMax).map((v) => ({ v, label: fmt(v) }));
  for (const { v, label } of xt) {
    const px = xPix(f, v);
    parts.push(`<line x1="${fmt(px)}" y1="${y0}" x2="${fmt(px)}" y2="${y0 + 4}" class="axis"/>`);
    parts.push(`<text x="${fmt(px)}" y="${y0 + 17}" text-anchor="middle" class="tick">${esc(label)}</text>`);
  }
  for (const v of ticks(f.yMin, f.yMax)) {
    const py = yPix(f, v);
    parts.push(`<line x1="${x0 - 4}" y1="${fmt(py)}" x2="${x0}" y2="${fmt(py)}" class="axis"/>`);
    parts.push(`<text x="${x0 - 7}" y="${fmt(py + 3.5)}" text-anchor="end" class="tick">${fmt(v)}</text>`);
  }
  parts.push(`<text x="${(x0 + x1) / 2}" y="${f.height - 8}" text-anchor="middle" class="label">${esc(xLabel)}</text>`);
  parts.push(`<text x="16" y="${(y0 + y1) / 2}" text-anchor="middle" class="label" transform="rotate(-90 16 ${(y0 + y1) / 2})">${esc(yLabel)}</text>`);
  return parts.join("\n");
}

export function polyline(f: Frame, points: Array<[number, number]>, color: string): string {
  const path = points.map(([x, y]) => `${fmt(xPix(f, x))},${fmt(yPix(f, y))}`).join(" ");
  return `<polyline points="${path}" fill="none" stroke="${color}" stroke-width="1.8"/>`;
}

export function dots(f: Frame, points: Array<[number, number]>, color: string): string {
  return points
    .map(([x, y]) => `<circle cx="${fmt(xPix(f, x))}" cy="${fmt(yPix(f, y))}" r="2.6" fill="${color}"/>`)
    .join("\n");
}

export function bar(f: Frame, x: number, width: number, y: number, color: string): string {
  const px = xPix(f, x);
  const pw = Math.abs(xPix(f, x + width) - px);
  const py = yPix(f, Math.max(y, 0));
  const py0 = yPix(f, Math.max(f.yMin, 0));
  const h = Math.abs(py0 - yPix(f, y));
  return `<rect x="${fmt(px)}" y="${fmt(Math.min(py, py0))}" width="${fmt(pw)}" height="${fmt(h)}" fill="${color}"/>`;
}

export function errorBar(f: Frame, x: number, y: number, sd: number): string {
  const px = xPix(f, x);
  const top = yPix(f, y + sd);
  const bot = yPix(f, y - sd);
  return `<line x1="${fmt(px)}" y1="${fmt(top)}" x2="${fmt(px)}" y2="${fmt(bot)}" class="err"/>` +
    `<line x1="${fmt(px - 3)}" y1="${fmt(top)}" x2="${fmt(px + 3)}" y2="${fmt(top)}" class="err"/>` +
    `<line x1="${fmt(px - 3)}" y1="${fmt(bot)}" x2="${fmt(px + 3)}" y2="${fmt(bot)}" class="err"/>`;
}

export function legend(f: Frame, entries: Array<{ label: string; color: string }>): string {
  const parts: string[] = [];
  let y = f.top + 4;
  const x = f.width - f.right - 150;
  for (const { label, color } of entries) {
    parts.push(`<rect x="${x}" y="${y - 8}" width="12" height="12" fill="${color}"/>`);
    parts.push(`<text x="${x + 17}" y="${y + 2}" class="tick">${esc(label)}</text>`);
    y += 16;
  }
  return parts.join("\n");
}

export function document(width: number, height: number, body: string): string {
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">
<style>
.title { font: bold 13px sans-serif; }
.label { font: 12px sans-serif; }
.tick { font: 10px sans-serif; fill: #333; }
.axis { stroke: #222; stroke-width: 1; }
.err { stroke: #222; stroke-width: 1; }
.note { font: italic 12px sans-serif; fill: #666; }
</style>
<rect width="${width}" height="${height}" fill="white"/>
${body}
</svg>
`;
}
