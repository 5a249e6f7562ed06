/**
 * Scoring models behind the adapter.
 *
 * A Model turns (src, hyp[, ref]) items into raw scores on a declared range;
 * the service applies the configured affine rescale to land on the 0-100
 * protocol scale. The shipped surrogates are deterministic and run in
 * process; a real neural scorer plugs in by implementing the same interface
 * (for example by shelling out to an inference runtime) and registering
 * itself under a new model id.
 */

export type Mode = "reference_based" | "reference_free";

export interface ScoreItem {
  src: string;
  hyp: string;
  ref?: string;
}

export interface Model {
  id: string;
  mode: Mode;
  /** raw output range, used to validate the configured rescale */
  rawRange: [number, number];
  scoreBatch(items: ScoreItem[]): number[];
}

// ---------------------------------------------------------------------------
// character n-gram F-score (reference-based surrogate)

function charNgramCounts(chars: string[], n: number): Map<string, number> {
  const counts = new Map<string, number>();
  for (let i = 0; i + n <= chars.length; i++) {
    const gram = chars.slice(i, i + n).join("");
    counts.set(gram, (counts.get(gram) ?? 0) + 1);
  }
  return counts;
}

/** F-beta over character n-grams 1..order, whitespace removed; returns 0..1. */
export function charNgramF(hyp: string, ref: string, order = 6, beta = 2): number {
  const hypChars = Array.from(hyp.replace(/\s+/g, ""));
  const refChars = Array.from(ref.replace(/\s+/g, ""));
  let precisionSum = 0;
  let recallSum = 0;
  let effective = 0;
  for (let n = 1; n <= order; n++) {
    const hypGrams = charNgramCounts(hypChars, n);
    const refGrams = charNgramCounts(refChars, n);
    let hypTotal = 0;
    for (const count of hypGrams.values()) hypTotal += count;
    let refTotal = 0;
    for (const count of refGrams.values()) refTotal += count;
    if (hypTotal === 0 || refTotal === 0) continue;
    let common = 0;
    for (const [gram, count] of hypGrams) {
      const other = refGrams.get(gram);
      if (other !== undefined) common += Math.min(count, other);
    }
    precisionSum += common / hypTotal;
    recallSum += common / refTotal;
    effective += 1;
  }
  if (effective === 0) return 0;
  const precision = precisionSum / effective;
  const recall = recallSum / effective;
  if (precision + recall === 0) return 0;
  const b2 = beta * beta;
  return ((1 + b2) * precision * recall) / (b2 * precision + recall);
}

// ---------------------------------------------------------------------------
// source-only plausibility (reference-free surrogate)

function cjkFraction(chars: string[]): number {
  if (chars.length === 0) return 0;
  let cjk = 0;
  for (const ch of chars) {
    const code = ch.codePointAt(0)!;
    if (
      (code >= 0x4e00 && code <= 0x9fff) ||
      (code >= 0x3400 && code <= 0x4dbf) ||
      (code >= 0x3040 && code <= 0x30ff) ||
      (code >= 0xf900 && code <= 0xfaff)
    ) {
      cjk += 1;
    }
  }
  return cjk / chars.length;
}

/**
 * Length-plausibility heuristic from src and hyp alone; returns 0..1.
 * The expected hyp/src character ratio follows the script direction
 * (CJK source to alphabetic target expands, the reverse compresses).
 */
export function lengthPlausibility(src: string, hyp: string): number {
  const hypChars = Array.from(hyp.replace(/\s+/g, ""));
  if (hypChars.length === 0) return 0;
  const srcChars = Array.from(src.replace(/\s+/g, ""));
  const srcCjk = cjkFraction(srcChars);
  const hypCjk = cjkFraction(hypChars);
  let expectedRatio = 1.0;
  if (srcCjk > 0.5 && hypCjk < 0.5) expectedRatio = 3.0;
  else if (srcCjk < 0.5 && hypCjk > 0.5) expectedRatio = 0.4;
  const expected = Math.max(srcChars.length * expectedRatio, 1);
  const ratio = hypChars.length / expected;
  const lengthComponent = 1 - Math.min(Math.abs(ratio - 1), 1);
  // content component: fraction of letterish characters
  let content = 0;
  for (const ch of hypChars) {
    if (/[\p{L}\p{N}\p{P}]/u.test(ch)) content += 1;
  }
  return 0.5 * lengthComponent + 0.5 * (content / hypChars.length);
}

// ---------------------------------------------------------------------------

class SurrogateChrf implements Model {
  id = "surrogate-chrf";
  mode: Mode = "reference_based";
  rawRange: [number, number] = [0, 1];
  scoreBatch(items: ScoreItem[]): number[] {
    return items.map((item) => charNgramF(item.hyp, item.ref ?? ""));
  }
}

class SurrogateQe implements Model {
  id = "surrogate-qe";
  mode: Mode = "reference_free";
  rawRange: [number, number] = [0, 1];
  scoreBatch(items: ScoreItem[]): number[] {
    return items.map((item) => lengthPlausibility(item.src, item.hyp));
  }
}

const REGISTRY: Record<string, () => Model> = {
  "surrogate-chrf": () => new SurrogateChrf(),
  "surrogate-qe": () => new SurrogateQe(),
};

/** Instantiate a registered model; throws when the id is unknown. */
export function loadModel(modelId: string): Model {
  const factory = REGISTRY[modelId];
  if (!factory) {
    throw new Error(
      `cannot load model '${modelId}': known models are ${Object.keys(REGISTRY).join(", ")}`
    );
  }
  return factory();
}
