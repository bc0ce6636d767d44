import { mkdtempSync, readFileSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { describe, expect, it } from 'vitest';

import { main } from '../src/cli';
import { ManifestError, parseManifest } from '../src/manifest';

describe('manifest parsing', () => {
    it('collects jobs in id order', () => {
        const manifest = parseManifest(
            'checkpoint = ckpt.json\n' +
            'job.2.kind = projection-matrix\n' +
            'job.2.dest = M.nbt\n' +
            'job.1.kind = text-embedding\n' +
            'job.1.source = hello world\n' +
            'job.1.dest = p.nbt\n',
        );
        expect(manifest.checkpoint).toBe('ckpt.json');
        expect(manifest.jobs.map((j) => j.id)).toEqual(['1', '2']);
        expect(manifest.jobs[0].source).toBe('hello world');
        expect(manifest.jobs[1].source).toBeNull();
    });

    it.each([
        ['job.1.kind = text-embedding\njob.1.source = x\njob.1.dest = a\n', /checkpoint/],
        ['checkpoint = c\n', /no jobs/],
        ['checkpoint = c\njob.1.kind = waveform\njob.1.source = x\njob.1.dest = a\n', /kind/],
        ['checkpoint = c\njob.1.kind = text-embedding\njob.1.source = x\n', /dest/],
        ['checkpoint = c\njob.1.kind = audio-embedding\njob.1.dest = a\n', /source/],
        [
            'checkpoint = c\n' +
            'job.1.kind = projection-matrix\njob.1.dest = a\n' +
            'job.2.kind = projection-matrix\njob.2.dest = a\n',
            /duplicate destination/,
        ],
        ['checkpoint = c\nstray = 1\n', /unknown key/],
        ['checkpoint = c\njob.1.kind = latent\njob.1.source = x\njob.1.dest = a\njob.1.extra = 1\n', /unknown field/],
    ])('rejects malformed manifests', (text, pattern) => {
        expect(() => parseManifest(text)).toThrow(ManifestError);
        expect(() => parseManifest(text)).toThrow(pattern);
    });
});

describe('cli', () => {
    it('runs a manifest end to end and is reproducible', () => {
        const dir = mkdtempSync(join(tmpdir(), 'exp-'));
        writeFileSync(
            join(dir, 'ckpt.json'),
            JSON.stringify({ format: 'reference-encoder', version: 1, d_sd: 32, d_clip: 48, seed: 7 }),
        );
        writeFileSync(
            join(dir, 'export.txt'),
            'checkpoint = ckpt.json\n' +
            'job.1.kind = text-embedding\n' +
            'job.1.source = rolling thunder\n' +
            'job.1.dest = out/prompt.nbt\n' +
            'job.2.kind = projection-matrix\n' +
            'job.2.dest = out/M.nbt\n',
        );
        expect(main(['export', '--manifest', join(dir, 'export.txt')])).toBe(0);
        const first = readFileSync(join(dir, 'out', 'prompt.nbt'));
        expect(main(['export', '--manifest', join(dir, 'export.txt')])).toBe(0);
        expect(readFileSync(join(dir, 'out', 'prompt.nbt')).equals(first)).toBe(true);
        expect(readFileSync(join(dir, 'out', 'M.nbt')).length).toBeGreaterThan(6);
    });

    it('fails cleanly on a missing manifest', () => {
        expect(main(['export', '--manifest', '/nonexistent/m.txt'])).toBe(1);
    });
});
