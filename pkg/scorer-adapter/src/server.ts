/**
 * HTTP service implementing the scoring wire protocol:
 *
 *   POST /score  {"mode": "reference_based"|"reference_free",
 *                 "items": [{"src", "hyp", "ref"?}, ...]}
 *             -> {"scores": [0..100, ...]}, order-aligned with items
 *   GET /healthz
 *
 * Errors are non-200 JSON bodies of the form {"error": text}. Models load
 * at startup; a bad model id or rescale kills the process before it binds.
 */

import * as fs from "node:fs";
import * as http from "node:http";

import { AdapterConfig, ModelConfig, parseConfig, validateRescale } from "./config";
import { Mode, Model, ScoreItem, loadModel } from "./models";

interface LoadedModel {
  config: ModelConfig;
  model: Model;
}

export function loadModels(config: AdapterConfig): Map<Mode, LoadedModel> {
  const loaded = new Map<Mode, LoadedModel>();
  for (const entry of config.models) {
    const model = loadModel(entry.model_id);
    if (model.mode !== entry.mode) {
      throw new Error(
        `model '${entry.model_id}' scores in mode '${model.mode}', config says '${entry.mode}'`
      );
    }
    validateRescale(entry, model.rawRange);
    loaded.set(entry.mode, { config: entry, model });
  }
  return loaded;
}

function clamp(value: number, low: number, high: number): number {
  return Math.min(Math.max(value, low), high);
}

function scoreInBatches(loaded: LoadedModel, items: ScoreItem[]): number[] {
  const { config, model } = loaded;
  const scores: number[] = [];
  for (let start = 0; start < items.length; start += config.batch_size) {
    const chunk = items.slice(start, start + config.batch_size);
    for (const raw of model.scoreBatch(chunk)) {
      scores.push(clamp(config.rescale.a * raw + config.rescale.b, 0, 100));
    }
  }
  return scores;
}

function validateItems(mode: Mode, itemsRaw: unknown): ScoreItem[] | string {
  if (!Array.isArray(itemsRaw)) return "items must be an array";
  const items: ScoreItem[] = [];
  for (let i = 0; i < itemsRaw.length; i++) {
    const item = itemsRaw[i] as Record<string, unknown>;
    if (typeof item !== "object" || item === null) return `item ${i} is not an object`;
    const src = item.src;
    const hyp = item.hyp;
    const ref = item.ref;
    if (typeof src !== "string" || typeof hyp !== "string") {
      return `item ${i} needs string 'src' and 'hyp'`;
    }
    if (mode === "reference_based") {
      if (typeof ref !== "string") return `item ${i}: reference_based scoring needs a 'ref'`;
      items.push({ src, hyp, ref });
    } else {
      if (ref !== undefined && ref !== null) {
        return `item ${i}: reference_free scoring must not receive a 'ref'`;
      }
      items.push({ src, hyp });
    }
  }
  return items;
}

export function createScoreServer(config: AdapterConfig): http.Server {
  const models = loadModels(config);

  const reply = (res: http.ServerResponse, status: number, payload: unknown) => {
    const body = JSON.stringify(payload);
    res.writeHead(status, {
      "Content-Type": "application/json",
      "Content-Length": Buffer.byteLength(body),
    });
    res.end(body);
  };

  return http.createServer((req, res) => {
    if (req.method === "GET" && req.url === "/healthz") {
      const hosted: Record<string, string> = {};
      for (const [mode, loaded] of models) hosted[mode] = loaded.model.id;
      reply(res, 200, { status: "ok", models: hosted });
      return;
    }
    if (req.method !== "POST" || req.url !== "/score") {
      reply(res, 404, { error: "not found" });
      return;
    }
    const chunks: Buffer[] = [];
    req.on("data", (chunk) => chunks.push(chunk));
    req.on("end", () => {
      let body: unknown;
      try {
        body = JSON.parse(Buffer.concat(chunks).toString("utf-8"));
      } catch {
        reply(res, 400, { error: "request body is not valid JSON" });
        return;
      }
      const { mode, items: itemsRaw } = (body ?? {}) as Record<string, unknown>;
      if (mode !== "reference_based" && mode !== "reference_free") {
        reply(res, 400, { error: `unknown mode '${String(mode)}'` });
        return;
      }
      const loaded = models.get(mode);
      if (!loaded) {
        reply(res, 400, { error: `no model hosted for mode '${mode}'` });
        return;
      }
      const items = validateItems(mode, itemsRaw);
      if (typeof items === "string") {
        reply(res, 400, { error: items });
        return;
      }
      try {
        reply(res, 200, { scores: scoreInBatches(loaded, items) });
      } catch (error) {
        reply(res, 500, { error: String(error) });
      }
    });
  });
}

export function serveScores(config: AdapterConfig): http.Server {
  const server = createScoreServer(config);
  const separator = config.listen_address.lastIndexOf(":");
  const host = config.listen_address.slice(0, separator) || "127.0.0.1";
  const port = Number(config.listen_address.slice(separator + 1));
  server.listen(port, host, () => {
    const address = server.address();
    console.log(`scorer adapter listening on ${JSON.stringify(address)}`);
  });
  return server;
}

function main(): void {
  const flagIndex = process.argv.indexOf("--config");
  if (flagIndex === -1 || flagIndex + 1 >= process.argv.length) {
    console.error("usage: node server.js --config adapter.json");
    process.exit(1);
  }
  let config: AdapterConfig;
  try {
    config = parseConfig(JSON.parse(fs.readFileSync(process.argv[flagIndex + 1], "utf-8")));
    loadModels(config); // fail before binding when a model cannot load
  } catch (error) {
    console.error(`startup failed: ${String(error)}`);
    process.exit(1);
  }
  serveScores(config);
}

if (require.main === module) {
  main();
}
