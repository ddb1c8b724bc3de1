import { readFile } from 'node:fs/promises';
import path from 'node:path';
import express, { type Express, type NextFunction, type Request, type Response } from 'express';
import type { Encoder } from './encoder.js';
import type { ImageManifest } from './manifest.js';

export interface ServiceOptions {
  encoder: Encoder;
  imageRoot: string;
  manifest: ImageManifest;
  maxBatch?: number;
  maxInFlight?: number;
}

/** Serializes at most `limit` embedding batches at a time. */
class Gate {
  private active = 0;
  private waiters: Array<() => void> = [];

  constructor(private readonly limit: number) {}

  async run<T>(work: () => Promise<T>): Promise<T> {
    if (this.active >= this.limit) {
      await new Promise<void>((resolve) => this.waiters.push(resolve));
    }
    this.active++;
    try {
      return await work();
    } finally {
      this.active--;
      this.waiters.shift()?.();
    }
  }
}

class HttpError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

function requireBatch(body: unknown, key: string, model: string, maxBatch: number): string[] {
  if (typeof body !== 'object' || body === null) {
    throw new HttpError(400, 'request body must be a JSON object');
  }
  const record = body as Record<string, unknown>;
  if (record.model !== undefined && record.model !== model) {
    throw new HttpError(400, `this service hosts model "${model}", got "${record.model}"`);
  }
  const batch = record[key];
  if (!Array.isArray(batch) || batch.length === 0) {
    throw new HttpError(400, `"${key}" must be a non-empty array`);
  }
  if (!batch.every((item) => typeof item === 'string')) {
    throw new HttpError(400, `"${key}" must contain only strings`);
  }
  if (batch.length > maxBatch) {
    throw new HttpError(413, `batch of ${batch.length} exceeds the limit of ${maxBatch}`);
  }
  return batch as string[];
}

export function createApp(options: ServiceOptions): Express {
  const { encoder, imageRoot, manifest } = options;
  const maxBatch = options.maxBatch ?? 256;
  const gate = new Gate(options.maxInFlight ?? 4);
  const app = express();
  app.use(express.json({ limit: '16mb' }));

  app.get('/v1/info', (_req, res) => {
    res.json({ model: encoder.modelName, dim: encoder.dim });
  });

  app.post('/v1/embed_text', (req, res, next) => {
    void (async () => {
      const texts = requireBatch(req.body, 'texts', encoder.modelName, maxBatch);
      const vectors = await gate.run(async () =>
        texts.map((text) => Array.from(encoder.encodeText(text))),
      );
      res.json({ dim: encoder.dim, vectors });
    })().catch(next);
  });

  app.post('/v1/embed_image', (req, res, next) => {
    void (async () => {
      const ids = requireBatch(req.body, 'image_ids', encoder.modelName, maxBatch);
      const vectors = await gate.run(async () => {
        const out: number[][] = [];
        for (const id of ids) {
          const relative = manifest[id];
          if (relative === undefined) {
            throw new HttpError(404, `unknown image id "${id}"`);
          }
          let bytes: Buffer;
          try {
            bytes = await readFile(path.join(imageRoot, relative));
          } catch {
            throw new HttpError(404, `image file missing for id "${id}" (${relative})`);
          }
          out.push(Array.from(encoder.encodeImage(bytes)));
        }
        return out;
      });
      res.json({ dim: encoder.dim, vectors });
    })().catch(next);
  });

  app.use((err: Error, _req: Request, res: Response, _next: NextFunction) => {
    if (err instanceof HttpError) {
      res.status(err.status).json({ error: err.message });
    } else if (err.name === 'SyntaxError' || 'body' in err) {
      // express.json() parse failures
      res.status(400).json({ error: `malformed JSON: ${err.message}` });
    } else {
      res.status(500).json({ error: err.message });
    }
  });

  return app;
}
