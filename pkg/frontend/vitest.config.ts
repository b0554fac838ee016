import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "node",
    // the integration suite trains a toy model and boots two servers
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
});
