/** Inpainting microservice.
 *
 * POST /inpaint  {image, mask: base64 PNG, seed, steps?} -> {image, meta}
 * GET  /health   {loaded, queue_depth}
 *
 * One fill at a time in a worker thread so /health stays responsive;
 * requests queue FIFO behind a bounded queue (429 when full). Unmasked
 * pixels are re-composited from the request before encoding, so the
 * 2/255 preservation guarantee holds regardless of the fill backend.
 */
import { createServer, IncomingMessage, ServerResponse } from "node:http";
import { Worker } from "node:worker_threads";
import { decodePngBase64, encodePngBase64, toMask } from "./codec.js";

const MAX_EDGE = 2048;
const MAX_QUEUE = 8;
const MAX_BODY_BYTES = 64 * 1024 * 1024;
const MODEL_ID = "pushpull-pyramid-1";
const DEFAULT_STEPS = 30;

interface PendingJob {
  resolve: (rgb: Uint8Array) => void;
  reject: (err: Error) => void;
}

class FillQueue {
  private worker: Worker;
  private pending = new Map<number, PendingJob>();
  private nextId = 0;
  depth = 0;
  loaded = false;

  constructor(onReady: () => void) {
    this.worker = new Worker(new URL("./fill_worker.js", import.meta.url));
    this.worker.on("message", (msg: { id: number; rgb?: Uint8Array; error?: string }) => {
      const job = this.pending.get(msg.id);
      if (!job) return;
      this.pending.delete(msg.id);
      this.depth--;
      if (msg.error !== undefined) job.reject(new Error(msg.error));
      else job.resolve(msg.rgb!);
    });
    // Warm-up job doubles as the model-load phase: health reports
    // loaded=false until the worker has answered once.
    const rgb = new Uint8Array(12).fill(128);
    const mask = new Uint8Array([0, 1, 0, 0]);
    this.submit(rgb, mask, 2, 2)
      .then(() => {
        this.loaded = true;
        onReady();
      })
      .catch(() => process.exit(1));
  }

  submit(
    rgb: Uint8Array,
    mask: Uint8Array,
    width: number,
    height: number,
  ): Promise<Uint8Array> {
    const id = this.nextId++;
    this.depth++;
    return new Promise((resolve, reject) => {
      this.pending.set(id, { resolve, reject });
      this.worker.postMessage({ id, rgb, mask, width, height });
    });
  }

  close(): Promise<number> {
    return this.worker.terminate();
  }
}

function sendJson(res: ServerResponse, status: number, body: unknown): void {
  const payload = JSON.stringify(body);
  res.writeHead(status, {
    "Content-Type": "application/json",
    "Content-Length": Buffer.byteLength(payload),
  });
  res.end(payload);
}

function readBody(req: IncomingMessage): Promise<Buffer> {
  return new Promise((resolve, reject) => {
    const chunks: Buffer[] = [];
    let size = 0;
    req.on("data", (chunk: Buffer) => {
      size += chunk.length;
      if (size > MAX_BODY_BYTES) {
        reject(new Error("body too large"));
        req.destroy();
        return;
      }
      chunks.push(chunk);
    });
    req.on("end", () => resolve(Buffer.concat(chunks)));
    req.on("error", reject);
  });
}

async function handleInpaint(
  queue: FillQueue,
  req: IncomingMessage,
  res: ServerResponse,
): Promise<void> {
  if (!queue.loaded) {
    sendJson(res, 503, { error: "model not loaded" });
    return;
  }
  if (queue.depth >= MAX_QUEUE) {
    sendJson(res, 429, { error: "queue full" });
    return;
  }
  let body: Record<string, unknown>;
  try {
    body = JSON.parse((await readBody(req)).toString("utf8"));
  } catch {
    sendJson(res, 400, { error: "malformed JSON body" });
    return;
  }
  if ("prompt" in body) {
    sendJson(res, 400, { error: "prompt-conditioned requests are not supported" });
    return;
  }
  if (typeof body.image !== "string" || typeof body.mask !== "string") {
    sendJson(res, 400, { error: "image and mask must be base64 PNG strings" });
    return;
  }
  const seed = Number.isInteger(body.seed) ? (body.seed as number) : 0;
  const steps = Number.isInteger(body.steps) ? (body.steps as number) : DEFAULT_STEPS;

  let image, maskImg;
  try {
    image = decodePngBase64(body.image);
    maskImg = decodePngBase64(body.mask);
  } catch {
    sendJson(res, 400, { error: "image or mask is not a decodable PNG" });
    return;
  }
  if (image.width !== maskImg.width || image.height !== maskImg.height) {
    sendJson(res, 400, {
      error: `mask ${maskImg.width}x${maskImg.height} does not match image ${image.width}x${image.height}`,
    });
    return;
  }
  if (Math.max(image.width, image.height) > MAX_EDGE) {
    sendJson(res, 413, { error: `longest edge exceeds ${MAX_EDGE}px` });
    return;
  }
  const mask = toMask(maskImg);

  const t0 = Date.now();
  let filled: Uint8Array;
  try {
    filled = await queue.submit(image.rgb, mask, image.width, image.height);
  } catch (err) {
    sendJson(res, 400, { error: String(err instanceof Error ? err.message : err) });
    return;
  }
  // Re-composite original unmasked pixels over the backend output.
  const out = new Uint8Array(filled);
  for (let i = 0; i < mask.length; i++) {
    if (!mask[i]) {
      out[i * 3] = image.rgb[i * 3];
      out[i * 3 + 1] = image.rgb[i * 3 + 1];
      out[i * 3 + 2] = image.rgb[i * 3 + 2];
    }
  }
  sendJson(res, 200, {
    image: encodePngBase64({ width: image.width, height: image.height, rgb: out }),
    meta: { model: MODEL_ID, steps, seed, wall_ms: Date.now() - t0 },
  });
}

export function createInpaintServer(onReady?: () => void) {
  const queue = new FillQueue(onReady ?? (() => {}));
  const server = createServer((req, res) => {
    const url = req.url ?? "";
    if (req.method === "GET" && url === "/health") {
      sendJson(res, 200, { loaded: queue.loaded, queue_depth: queue.depth });
      return;
    }
    if (req.method === "POST" && url === "/inpaint") {
      handleInpaint(queue, req, res).catch((err) =>
        sendJson(res, 500, { error: String(err) }),
      );
      return;
    }
    sendJson(res, 404, { error: "not found" });
  });
  const close = server.close.bind(server);
  (server as unknown as { close: typeof close }).close = ((cb?: (err?: Error) => void) => {
    queue.close().then(() => close(cb));
    return server;
  }) as typeof close;
  return server;
}

const isMain = process.argv[1]?.endsWith("server.js");
if (isMain) {
  const port = Number(process.env.INPAINT_PORT ?? 8189);
  const server = createInpaintServer(() =>
    console.log(`inpaint-server ready on :${port}`),
  );
  server.listen(port);
}
