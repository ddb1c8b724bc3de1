import { createApp } from './app.js';
import { HashEncoder } from './encoder.js';
import { loadManifest } from './manifest.js';

interface Args {
  model: string;
  dim: number;
  imageRoot: string;
  manifest: string;
  port: number;
}

function parseArgs(argv: string[]): Args {
  const args: Args = {
    model: 'hash-512',
    dim: 512,
    imageRoot: '.',
    manifest: '',
    port: 8800,
  };
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const value = () => {
      const v = argv[++i];
      if (v === undefined) throw new Error(`missing value for ${flag}`);
      return v;
    };
    switch (flag) {
      case '--model':
        args.model = value();
        break;
      case '--dim':
        args.dim = Number(value());
        break;
      case '--image-root':
        args.imageRoot = value();
        break;
      case '--manifest':
        args.manifest = value();
        break;
      case '--port':
        args.port = Number(value());
        break;
      case '--help':
        console.log(
          'usage: main.js --model NAME --image-root DIR --manifest FILE [--dim D] [--port P]',
        );
        process.exit(0);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  return args;
}

const args = parseArgs(process.argv.slice(2));
const manifest = args.manifest ? loadManifest(args.manifest) : {};
const app = createApp({
  encoder: new HashEncoder(args.model, args.dim),
  imageRoot: args.imageRoot,
  manifest,
});
const server = app.listen(args.port, '127.0.0.1', () => {
  const address = server.address();
  const port = typeof address === 'object' && address !== null ? address.port : args.port;
  console.log(`embedding service "${args.model}" (dim ${args.dim}) listening on http://127.0.0.1:${port}`);
});
