/**
 * Fixed palette: control gray, AS a warm ramp over lambda, WS a cool ramp.
 * The mapping is deterministic so reruns are byte-identical.
 */

const LAMBDA_LEVELS = [0.1, 0.3, 0.5, 1, 2, 3];

function ramp(from: [number, number, number], to: [number, number, number], t: number): string {
  const c = from.map((f, i) => Math.round(f + (to[i] - f) * t));
  return `rgb(${c[0]},${c[1]},${c[2]})`;
}

export function colorFor(constraint: string, lam: number): string {
  if (constraint === "none") return "rgb(120,120,120)";
  const idx = LAMBDA_LEVELS.findIndex((l) => Math.abs(l - lam) < 1e-9);
  const t = idx >= 0 ? idx / (LAMBDA_LEVELS.length - 1) : Math.min(lam / 3, 1);
  if (constraint === "as") return ramp([250, 200, 80], [180, 30, 30], t); // warm
  if (constraint === "ws") return ramp([120, 205, 235], [15, 50, 160], t); // cool
  return "rgb(60,160,90)"; // as_global and anything else
}

export function labelFor(constraint: string, lam: number): string {
  if (constraint === "none") return "control";
  return `${constraint} λ=${formatNumber(lam)}`;
}

export function formatNumber(v: number): string {
  if (Number.isInteger(v)) return String(v);
  return String(Math.round(v * 1e6) / 1e6);
}

/** Dominant-harmonic map colors: 0 = flat, cycles 1..5. */
export const CYCLE_COLORS: Record<number, string> = {
  0: "rgb(230,230,230)",
  1: "rgb(68,119,170)",
  2: "rgb(102,204,238)",
  3: "rgb(34,136,51)",
  4: "rgb(204,187,68)",
  5: "rgb(238,102,119)",
};
