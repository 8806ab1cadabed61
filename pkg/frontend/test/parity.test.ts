/**
 * Grouping-parity cross-check: the renderer's per-(constraint, lambda,
 * metric, param) seed aggregation must agree with the producing package's
 * `compare` command, verified against a summary it wrote for the same
 * frozen fixture.
 */

import assert from "node:assert/strict";
import { test } from "node:test";
import { readFileSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";

import { meanOverSeeds, parseCsv } from "../src/csv.js";
import { loadInput } from "../src/render_all.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const FIXTURES = join(HERE, "..", "..", "fixtures");

interface SummaryRow {
  constraint: string;
  lam: number;
  metric: string;
  param1: string;
  param2: string;
  n_seeds: number;
  mean: number;
  sd: number | null;
}

function loadExpectedSummary(): SummaryRow[] {
  const rows = parseCsv(readFileSync(join(FIXTURES, "expected_summary.csv"), "utf-8"));
  assert.deepEqual(rows[0], ["constraint", "lam", "metric", "param1", "param2", "n_seeds", "mean", "sd"]);
  return rows.slice(1).filter((r) => r.length > 1).map((r) => ({
    constraint: r[0], lam: Number(r[1]), metric: r[2], param1: r[3], param2: r[4],
    n_seeds: Number(r[5]), mean: Number(r[6]), sd: r[7] === "" ? null : Number(r[7]),
  }));
}

test("seed aggregation matches the producing package on the shared fixture", () => {
  const { input } = loadInput(FIXTURES);
  const allRows = [...input.tables.values()].flat();
  const expected = loadExpectedSummary();
  assert.ok(expected.length > 1000);

  let checked = 0;
  for (const exp of expected) {
    const rows = allRows.filter((r) =>
      r.constraint === exp.constraint && Math.abs(r.lam - exp.lam) < 1e-9 &&
      r.metric === exp.metric && r.param1 === exp.param1 && r.param2 === exp.param2);
    assert.ok(rows.length > 0, `${exp.metric} [${exp.param1}|${exp.param2}] has no fixture rows`);
    const stats = meanOverSeeds(rows);
    assert.equal(stats.n, exp.n_seeds, exp.metric);
    assert.ok(Math.abs(stats.mean - exp.mean) < 1e-9 + Math.abs(exp.mean) * 1e-9,
      `${exp.metric} [${exp.param1}|${exp.param2}]: mean ${stats.mean} != ${exp.mean}`);
    if (exp.sd === null) assert.equal(stats.sd, null);
    else assert.ok(Math.abs((stats.sd ?? NaN) - exp.sd) < 1e-9 + exp.sd * 1e-9, exp.metric);
    checked++;
  }
  assert.equal(checked, expected.length);
});
