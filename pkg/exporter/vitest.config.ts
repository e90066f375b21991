import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    include: ["test/**/*.test.ts"],
    testTimeout: 120_000,
    // tfjs keeps a worker-ish event loop alive; run files in one process
    pool: "forks",
    poolOptions: { forks: { singleFork: true } },
  },
});
