/**
 * Reader for topolab metric tables.
 *
 * Every analysis family shares one schema:
 *   model_id, constraint, lam, seed, metric, param1, param2, value
 * A version bump in the producing package is the only permitted column
 * change, so any header mismatch is a hard error.
 */

export interface MetricRow {
  model_id: string;
  constraint: string;
  lam: number;
  seed: number;
  metric: string;
  param1: string;
  param2: string;
  value: number;
}

export const COLUMNS = [
  "model_id", "constraint", "lam", "seed", "metric", "param1", "param2", "value",
] as const;

/** RFC-4180-lite: quoted fields with embedded commas/quotes, LF or CRLF rows. */
export function parseCsv(text: string): string[][] {
  const rows: string[][] = [];
  let field = "";
  let row: string[] = [];
  let inQuotes = false;
  for (let i = 0; i < text.length; i++) {
    const ch = text[i];
    if (inQuotes) {
      if (ch === '"') {
        if (text[i + 1] === '"') { field += '"'; i++; }
        else inQuotes = false;
      } else field += ch;
    } else if (ch === '"') {
      inQuotes = true;
    } else if (ch === ",") {
      row.push(field); field = "";
    } else if (ch === "\n") {
      row.push(field); field = "";
      rows.push(row); row = [];
    } else if (ch !== "\r") {
      field += ch;
    }
  }
  if (field.length > 0 || row.length > 0) { row.push(field); rows.push(row); }
  return rows;
}

export function parseMetricTable(text: string, name = "table"): MetricRow[] {
  const rows = parseCsv(text);
  if (rows.length === 0) throw new Error(`${name}: empty file`);
  const header = rows[0];
  if (header.length !== COLUMNS.length || !COLUMNS.every((c, i) => header[i] === c)) {
    throw new Error(`${name}: unexpected columns [${header.join(", ")}]; ` +
      `expected [${COLUMNS.join(", ")}]`);
  }
  return rows.slice(1).filter((r) => r.length > 1).map((r, i) => {
    const value = Number(r[7]);
    const lam = Number(r[2]);
    const seed = Number(r[3]);
    if (!Number.isFinite(value) || !Number.isFinite(lam) || !Number.isFinite(seed)) {
      throw new Error(`${name}: non-numeric field on data row ${i + 1}`);
    }
    return {
      model_id: r[0], constraint: r[1], lam, seed,
      metric: r[4], param1: r[5], param2: r[6], value,
    };
  });
}

/** Mean of per-seed means (repetitions within a seed average first). */
export function meanOverSeeds(rows: MetricRow[]): { mean: number; sd: number | null; n: number } {
  const bySeed = new Map<number, number[]>();
  for (const r of rows) {
    const list = bySeed.get(r.seed) ?? [];
    list.push(r.value);
    bySeed.set(r.seed, list);
  }
  const means = [...bySeed.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([, vals]) => vals.reduce((s, v) => s + v, 0) / vals.length);
  const n = means.length;
  if (n === 0) return { mean: NaN, sd: null, n: 0 };
  const mean = means.reduce((s, v) => s + v, 0) / n;
  if (n === 1) return { mean, sd: null, n };
  const varSum = means.reduce((s, v) => s + (v - mean) ** 2, 0) / (n - 1);
  return { mean, sd: Math.sqrt(varSum), n };
}

export function pick(rows: MetricRow[], metric: string,
                     filter: Partial<Pick<MetricRow, "constraint" | "param1" | "param2">> = {},
                     lam?: number): MetricRow[] {
  return rows.filter((r) =>
    r.metric === metric &&
    (filter.constraint === undefined || r.constraint === filter.constraint) &&
    (filter.param1 === undefined || r.param1 === filter.param1) &&
    (filter.param2 === undefined || r.param2 === filter.param2) &&
    (lam === undefined || Math.abs(r.lam - lam) < 1e-9));
}

/** Sorted distinct (constraint, lam) conditions, control first then by lam. */
export function conditionsOf(rows: MetricRow[]): Array<{ constraint: string; lam: number }> {
  const seen = new Map<string, { constraint: string; lam: number }>();
  for (const r of rows) seen.set(`${r.constraint}|${r.lam}`, { constraint: r.constraint, lam: r.lam });
  const order = (c: string) => (c === "none" ? 0 : c === "as" ? 1 : c === "ws" ? 2 : 3);
  return [...seen.values()].sort((a, b) =>
    order(a.constraint) - order(b.constraint) || a.lam - b.lam || a.constraint.localeCompare(b.constraint));
}
