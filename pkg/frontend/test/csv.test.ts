import assert from "node:assert/strict";
import { test } from "node:test";

import { conditionsOf, meanOverSeeds, parseCsv, parseMetricTable, pick } from "../src/csv.js";

const HEADER = "model_id,constraint,lam,seed,metric,param1,param2,value";

test("parses the canonical schema", () => {
  const rows = parseMetricTable(`${HEADER}\nm1,ws,0.1,3,soi,0.5,7,0.25\n`);
  assert.equal(rows.length, 1);
  assert.deepEqual(rows[0], {
    model_id: "m1", constraint: "ws", lam: 0.1, seed: 3,
    metric: "soi", param1: "0.5", param2: "7", value: 0.25,
  });
});

test("rejects unexpected columns by name", () => {
  assert.throws(() => parseMetricTable("a,b\n1,2\n", "bad.csv"), /bad\.csv: unexpected columns/);
});

test("rejects non-numeric values", () => {
  assert.throws(() => parseMetricTable(`${HEADER}\nm1,ws,0.1,3,soi,,,oops\n`), /non-numeric/);
});

test("handles quoted fields with commas", () => {
  const rows = parseCsv('a,"b,c",d\n');
  assert.deepEqual(rows, [["a", "b,c", "d"]]);
});

test("mean over seeds averages repetitions within a seed first", () => {
  const rows = parseMetricTable(
    `${HEADER}\nm,ws,1,0,m,,0,0\nm,ws,1,0,m,,1,1\nm2,ws,1,1,m,,0,1\n`);
  const stats = meanOverSeeds(rows);
  // seed 0 mean = 0.5, seed 1 mean = 1 -> mean 0.75
  assert.equal(stats.n, 2);
  assert.equal(stats.mean, 0.75);
});

test("single seed reports sd as missing, identical seeds give sd 0", () => {
  const one = meanOverSeeds(parseMetricTable(`${HEADER}\nm,ws,1,0,m,,,0.5\n`));
  assert.equal(one.sd, null);
  const same = meanOverSeeds(parseMetricTable(
    `${HEADER}\na,ws,1,0,m,,,0.5\nb,ws,1,1,m,,,0.5\n`));
  assert.equal(same.sd, 0);
});

test("conditions sort control first then by lambda", () => {
  const rows = parseMetricTable(
    `${HEADER}\na,ws,3,0,m,,,1\nb,none,0,0,m,,,1\nc,ws,0.1,0,m,,,1\nd,as,1,0,m,,,1\n`);
  assert.deepEqual(conditionsOf(rows), [
    { constraint: "none", lam: 0 },
    { constraint: "as", lam: 1 },
    { constraint: "ws", lam: 0.1 },
    { constraint: "ws", lam: 3 },
  ]);
});

test("pick filters by metric, params and lambda", () => {
  const rows = parseMetricTable(
    `${HEADER}\na,ws,3,0,soi,0.5,0,1\na,ws,3,0,soi,1,0,2\na,ws,3,0,acc,0.5,0,3\n`);
  assert.equal(pick(rows, "soi", { param1: "0.5" }).length, 1);
  assert.equal(pick(rows, "soi", {}, 3).length, 2);
  assert.equal(pick(rows, "soi", {}, 1).length, 0);
});
