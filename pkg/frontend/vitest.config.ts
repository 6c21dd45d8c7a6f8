import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
    // the e2e file drives a real pipeline server; give hooks room
    testTimeout: 30000,
    hookTimeout: 240000,
  },
});
