import { parentPort } from "node:worker_threads";
import { pushPullFill } from "./fill.js";

interface Job {
  id: number;
  rgb: Uint8Array;
  mask: Uint8Array;
  width: number;
  height: number;
}

if (!parentPort) throw new Error("must run as a worker thread");

parentPort.on("message", (job: Job) => {
  try {
    const filled = pushPullFill(job.rgb, job.mask, job.width, job.height);
    parentPort!.postMessage({ id: job.id, rgb: filled });
  } catch (err) {
    parentPort!.postMessage({ id: job.id, error: String(err) });
  }
});
