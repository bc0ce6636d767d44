#!/usr/bin/env node
// encoder-export export --manifest PATH [--checkpoint PATH]

import { mkdirSync, writeFileSync, readFileSync } from 'node:fs';
import { dirname, resolve } from 'node:path';

import { ReferenceEncoder, loadCheckpoint } from './encoder';
import { parseManifest, ExportJob } from './manifest';
import { encodeTensor, NbtTensor } from './nbt';

function usage(): never {
    console.error(
        'usage: encoder-export export --manifest PATH [--checkpoint PATH]',
    );
    process.exit(2);
}

export function runExport(manifestPath: string, checkpointOverride?: string): void {
    const manifestDir = dirname(resolve(manifestPath));
    const manifest = parseManifest(readFileSync(manifestPath, 'utf-8'));
    const checkpointPath = checkpointOverride ?? resolve(manifestDir, manifest.checkpoint);
    const encoder = new ReferenceEncoder(loadCheckpoint(checkpointPath));

    for (const job of manifest.jobs) {
        const tensor = runJob(encoder, job, manifestDir);
        const dest = resolve(manifestDir, job.dest);
        mkdirSync(dirname(dest), { recursive: true });
        writeFileSync(dest, encodeTensor(tensor));
        console.log(`${job.kind} -> ${dest} [${tensor.shape.join(' x ') || 'scalar'}]`);
    }
}

function runJob(encoder: ReferenceEncoder, job: ExportJob, baseDir: string): NbtTensor {
    switch (job.kind) {
        case 'text-embedding':
            return encoder.textEmbedding(job.source!);
        case 'audio-embedding':
            return encoder.audioEmbedding(resolve(baseDir, job.source!));
        case 'projection-matrix':
            return encoder.projectionMatrix();
        case 'latent':
            return encoder.latent(resolve(baseDir, job.source!));
    }
}

export function main(argv: string[]): number {
    if (argv[0] !== 'export') usage();
    let manifest: string | undefined;
    let checkpoint: string | undefined;
    for (let i = 1; i < argv.length; i += 2) {
        const flag = argv[i];
        const value = argv[i + 1];
        if (value === undefined) usage();
        if (flag === '--manifest') manifest = value;
        else if (flag === '--checkpoint') checkpoint = value;
        else usage();
    }
    if (!manifest) usage();
    try {
        runExport(manifest, checkpoint);
        return 0;
    } catch (err) {
        console.error(`error: ${err instanceof Error ? err.message : err}`);
        return 1;
    }
}

if (require.main === module) {
    process.exit(main(process.argv.slice(2)));
}
