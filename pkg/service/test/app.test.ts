import { mkdtempSync, readFileSync, readdirSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import path from 'node:path';
import type { Server } from 'node:http';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import { createApp } from '../src/app.js';
import { HashEncoder, l2Normalize } from '../src/encoder.js';

const FIXTURE_DIR = path.join(__dirname, '..', 'fixtures');

let server: Server;
let base: string;
let imageRoot: string;

beforeAll(async () => {
  imageRoot = mkdtempSync(path.join(tmpdir(), 'vltaboo-imgs-'));
  // image "0" has fixed bytes so golden fixtures stay reproducible
  writeFileSync(path.join(imageRoot, '0.bin'), Buffer.from([...Array(64).keys()]));
  writeFileSync(path.join(imageRoot, '1.bin'), Buffer.from('second image'));
  const app = createApp({
    encoder: new HashEncoder('hash-512', 512),
    imageRoot,
    manifest: { '0': '0.bin', '1': '1.bin', ghost: 'missing.bin' },
  });
  await new Promise<void>((resolve) => {
    server = app.listen(0, '127.0.0.1', resolve);
  });
  const address = server.address();
  if (typeof address !== 'object' || address === null) throw new Error('no port');
  base = `http://127.0.0.1:${address.port}`;
});

afterAll(() => {
  server.close();
});

async function post(route: string, body: unknown): Promise<Response> {
  return fetch(base + route, {
    method: 'POST',
    headers: { 'Content-Type': 'application/json' },
    body: typeof body === 'string' ? body : JSON.stringify(body),
  });
}

function norm(vector: number[]): number {
  return Math.sqrt(vector.reduce((acc, v) => acc + v * v, 0));
}

describe('GET /v1/info', () => {
  it('reports model and dim', async () => {
    const response = await fetch(`${base}/v1/info`);
    expect(response.status).toBe(200);
    expect(await response.json()).toEqual({ model: 'hash-512', dim: 512 });
  });
});

describe('POST /v1/embed_text', () => {
  it('returns one unit-norm vector per input, in order', async () => {
    const response = await post('/v1/embed_text', {
      model: 'hash-512',
      texts: ['a photo of a collie', 'a photo of an animal'],
    });
    expect(response.status).toBe(200);
    const payload = await response.json();
    expect(payload.dim).toBe(512);
    expect(payload.vectors).toHaveLength(2);
    for (const vector of payload.vectors) {
      expect(vector).toHaveLength(512);
      expect(Math.abs(norm(vector) - 1)).toBeLessThan(1e-4);
    }
    expect(payload.vectors[0]).not.toEqual(payload.vectors[1]);
  });

  it('is byte-identical across repeated identical requests', async () => {
    const body = { model: 'hash-512', texts: ['same request twice'] };
    const first = await (await post('/v1/embed_text', body)).text();
    const second = await (await post('/v1/embed_text', body)).text();
    expect(second).toBe(first);
  });

  it('rejects batches over 256 with 413', async () => {
    const response = await post('/v1/embed_text', {
      model: 'hash-512',
      texts: Array.from({ length: 257 }, (_, i) => `t${i}`),
    });
    expect(response.status).toBe(413);
  });

  it('rejects malformed JSON with 400', async () => {
    const response = await post('/v1/embed_text', '{"texts": [truncated');
    expect(response.status).toBe(400);
    const payload = await response.json();
    expect(payload.error).toContain('JSON');
  });

  it('rejects a mismatched model name', async () => {
    const response = await post('/v1/embed_text', { model: 'other', texts: ['x'] });
    expect(response.status).toBe(400);
  });

  it('rejects empty and non-string batches', async () => {
    expect((await post('/v1/embed_text', { model: 'hash-512', texts: [] })).status).toBe(400);
    expect((await post('/v1/embed_text', { model: 'hash-512', texts: [5] })).status).toBe(400);
  });
});

describe('POST /v1/embed_image', () => {
  it('embeds manifest-resolved images deterministically', async () => {
    const body = { model: 'hash-512', image_ids: ['0', '1'] };
    const first = await (await post('/v1/embed_image', body)).json();
    const second = await (await post('/v1/embed_image', body)).json();
    expect(first).toEqual(second);
    expect(first.vectors).toHaveLength(2);
    expect(Math.abs(norm(first.vectors[0]) - 1)).toBeLessThan(1e-4);
    expect(first.vectors[0]).not.toEqual(first.vectors[1]);
  });

  it('404s unknown ids, naming the id', async () => {
    const response = await post('/v1/embed_image', { model: 'hash-512', image_ids: ['42'] });
    expect(response.status).toBe(404);
    expect((await response.json()).error).toContain('42');
  });

  it('404s ids whose file is missing', async () => {
    const response = await post('/v1/embed_image', { model: 'hash-512', image_ids: ['ghost'] });
    expect(response.status).toBe(404);
    expect((await response.json()).error).toContain('ghost');
  });
});

describe('encoder', () => {
  it('normalizes exactly', () => {
    const v = l2Normalize(new Float64Array([3, 4]));
    expect(v[0]).toBeCloseTo(0.6, 12);
    expect(v[1]).toBeCloseTo(0.8, 12);
  });

  it('different models give different spaces', () => {
    const a = new HashEncoder('model-a', 16).encodeText('hello');
    const b = new HashEncoder('model-b', 16).encodeText('hello');
    expect(Array.from(a)).not.toEqual(Array.from(b));
  });
});

describe('golden fixtures', () => {
  it('replays every committed request/response pair exactly', async () => {
    const names = readdirSync(FIXTURE_DIR).filter((n) => n.endsWith('.json'));
    expect(names.length).toBeGreaterThanOrEqual(3);
    for (const name of names) {
      const fixture = JSON.parse(readFileSync(path.join(FIXTURE_DIR, name), 'utf-8'));
      const { request, response: expected } = fixture;
      const response =
        request.method === 'GET'
          ? await fetch(base + request.path)
          : await post(request.path, request.body);
      expect(response.status, name).toBe(expected.status);
      expect(await response.json(), name).toEqual(expected.body);
    }
  });
});
