// Cross-language compatibility: everything this tool exports must be
// readable by the Python engine, and the exported projection matrix must
// drive its forward projection to unit norm.  The engine is reached only
// through its external surfaces: .nbt files, the tensor reader, and the
// `promptfuse bridge` CLI.

import { execFileSync } from 'node:child_process';
import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { beforeAll, describe, expect, it } from 'vitest';

import { runExport } from '../src/cli';
import { decodeTensor } from '../src/nbt';
import { encodeWavPcm16 } from '../src/wav';

const CHECKPOINT = join(__dirname, '..', 'checkpoints', 'reference-encoder.json');

let dir: string;

beforeAll(() => {
    dir = mkdtempSync(join(tmpdir(), 'compat-'));
    const samples = new Float32Array(16000);
    for (let i = 0; i < samples.length; i++) {
        samples[i] = 0.4 * Math.sin((2 * Math.PI * 620 * i) / 16000)
            + 0.2 * Math.sin((2 * Math.PI * 2400 * i) / 16000);
    }
    writeFileSync(join(dir, 'clip.wav'), encodeWavPcm16(samples, 16000));
    writeFileSync(join(dir, 'photo.bin'), Buffer.from('stand-in image bytes'));
    writeFileSync(
        join(dir, 'export.txt'),
        `checkpoint = ${CHECKPOINT}\n` +
        'job.1.kind = text-embedding\n' +
        'job.1.source = a harbor at dawn\n' +
        'job.1.dest = out/prompt.nbt\n' +
        'job.2.kind = audio-embedding\n' +
        'job.2.source = clip.wav\n' +
        'job.2.dest = out/audio.nbt\n' +
        'job.3.kind = projection-matrix\n' +
        'job.3.dest = out/M.nbt\n' +
        'job.4.kind = latent\n' +
        'job.4.source = photo.bin\n' +
        'job.4.dest = out/latent.nbt\n',
    );
    runExport(join(dir, 'export.txt'));
}, 30000);

describe('primary engine compatibility', () => {
    it('every exported file parses in the engine with the right rank', () => {
        const script =
            'import json, sys\n' +
            'from promptfuse import load_tensor\n' +
            'out = {}\n' +
            'for name in sys.argv[1:]:\n' +
            '    t = load_tensor(name)\n' +
            '    out[name.split("/")[-1]] = {"shape": list(t.shape), "dtype": str(t.dtype)}\n' +
            'print(json.dumps(out))\n';
        const report = JSON.parse(
            execFileSync('python3', [
                '-c', script,
                join(dir, 'out', 'prompt.nbt'),
                join(dir, 'out', 'audio.nbt'),
                join(dir, 'out', 'M.nbt'),
                join(dir, 'out', 'latent.nbt'),
            ]).toString(),
        );
        // load_tensor itself rejects non-finite payloads, so parsing == finite
        expect(report['prompt.nbt'].shape).toEqual([6, 768]); // 4 tokens + specials
        expect(report['audio.nbt'].shape).toEqual([1024]);
        expect(report['M.nbt'].shape).toEqual([1024, 768]);
        expect(report['latent.nbt'].shape).toEqual([4, 64, 64]);
        for (const entry of Object.values(report) as { dtype: string }[]) {
            expect(entry.dtype).toBe('float32');
        }
    }, 30000);

    it('exported M drives the forward projection to unit norm', () => {
        const stdout = execFileSync('promptfuse', [
            'bridge',
            '--audio', join(dir, 'out', 'audio.nbt'),
            '--map', join(dir, 'out', 'M.nbt'),
            '--inv-prompt', join(dir, 'out', 'prompt.nbt'),
            '--out', join(dir, 'bridge_out'),
        ]).toString();
        const match = stdout.match(/forward_projection_norm = ([-+0-9.eE]+)/);
        expect(match).not.toBeNull();
        expect(Math.abs(parseFloat(match![1]) - 1)).toBeLessThan(1e-4);

        // and the engine's output comes back readable on this side
        const bridged = decodeTensor(readFileSync(join(dir, 'bridge_out', 'bridged_prompt.nbt')));
        expect(bridged.shape.length).toBe(2);
        expect(bridged.shape[1]).toBe(768);
    }, 30000);
});
