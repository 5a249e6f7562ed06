/** Adapter configuration: one entry per hosted model, one listen address. */

import { Mode } from "./models";

export interface ModelConfig {
  model_id: string;
  mode: Mode;
  device: string;
  batch_size: number;
  rescale: { a: number; b: number };
}

export interface AdapterConfig {
  listen_address: string;
  models: ModelConfig[];
}

const MODES: Mode[] = ["reference_based", "reference_free"];

export function parseConfig(raw: unknown): AdapterConfig {
  if (typeof raw !== "object" || raw === null) {
    throw new Error("config must be a JSON object");
  }
  const obj = raw as Record<string, unknown>;
  const listen = typeof obj.listen_address === "string" ? obj.listen_address : "127.0.0.1:8750";
  const modelsRaw = Array.isArray(obj.models) ? obj.models : [];
  if (modelsRaw.length === 0) {
    throw new Error("config needs at least one model entry");
  }
  const models: ModelConfig[] = [];
  const seenModes = new Set<string>();
  for (const entry of modelsRaw) {
    const m = entry as Record<string, unknown>;
    const mode = m.mode as Mode;
    if (!MODES.includes(mode)) {
      throw new Error(`model entry has invalid mode '${String(m.mode)}'`);
    }
    if (seenModes.has(mode)) {
      throw new Error(`duplicate model for mode '${mode}'`);
    }
    seenModes.add(mode);
    const batchSize = Number(m.batch_size ?? 32);
    if (!Number.isInteger(batchSize) || batchSize < 1) {
      throw new Error("batch_size must be a positive integer");
    }
    const rescaleRaw = (m.rescale ?? { a: 100, b: 0 }) as Record<string, unknown>;
    const a = Number(rescaleRaw.a ?? 100);
    const b = Number(rescaleRaw.b ?? 0);
    if (!Number.isFinite(a) || !Number.isFinite(b)) {
      throw new Error("rescale coefficients must be finite");
    }
    models.push({
      model_id: String(m.model_id ?? ""),
      mode,
      device: String(m.device ?? "cpu"),
      batch_size: batchSize,
      rescale: { a, b },
    });
  }
  return { listen_address: listen, models };
}

/** The affine rescale must map the model's raw range into [0, 100]. */
export function validateRescale(config: ModelConfig, rawRange: [number, number]): void {
  for (const raw of rawRange) {
    const mapped = config.rescale.a * raw + config.rescale.b;
    if (mapped < 0 || mapped > 100) {
      throw new Error(
        `rescale (a=${config.rescale.a}, b=${config.rescale.b}) maps raw ${raw} to ${mapped}, ` +
          "outside the 0..100 protocol scale"
      );
    }
  }
}
