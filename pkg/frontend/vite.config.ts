import { defineConfig } from 'vitest/config';

export default defineConfig({
  server: {
    proxy: {
      // Point the dev server at a running engine service.
      '/state': 'http://127.0.0.1:8765',
      '/events': 'http://127.0.0.1:8765',
      '/goal': 'http://127.0.0.1:8765',
      '/playback': 'http://127.0.0.1:8765',
      '/registry': 'http://127.0.0.1:8765',
      '/trajectory': 'http://127.0.0.1:8765',
      '/nav': 'http://127.0.0.1:8765',
    },
  },
  test: {
    environment: 'node',
  },
});
