import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    include: ['tests/**/*.test.ts'],
    // the conformance test shells out to the python engine
    testTimeout: 120_000,
  },
});
