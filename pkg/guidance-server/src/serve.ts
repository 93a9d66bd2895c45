/**
 * CLI wrapper around the guidance server.
 *
 *   node dist/serve.js --data data --models models --port 4044
 */

import { parseArgs } from "node:util";
import { join } from "node:path";
import { startServer } from "./server.js";

async function main(): Promise<void> {
  const { values } = parseArgs({
    args: process.argv.slice(2),
    options: {
      data: { type: "string", default: "data" },
      models: { type: "string", default: "models" },
      host: { type: "string", default: "127.0.0.1" },
      port: { type: "string", default: "4044" },
    },
  });
  const port = Number(values.port);
  if (!Number.isInteger(port) || port < 0 || port > 65535) {
    throw new Error(`bad port ${values.port}`);
  }
  const running = await startServer({
    dataDir: values.data!,
    relevance: join(values.models!, "relevance"),
    generative: join(values.models!, "generative"),
    payoff: join(values.models!, "payoff"),
    host: values.host,
    port,
  });
  console.log(`guidance server listening on ${values.host}:${running.port}`);
  const stop = (): void => {
    running.close().then(() => process.exit(0), () => process.exit(1));
  };
  process.on("SIGINT", stop);
  process.on("SIGTERM", stop);
}

main().catch((e) => {
  console.error((e as Error).message);
  process.exit(1);
});
