// Deterministic reference encoder.
//
// Real deployments would call the pretrained text/audio towers here; this
// module stands in with a locally seeded encoder so exports are reproducible
// and self-contained: token embeddings and the projection matrix are pure
// functions of the checkpoint seed, and audio embeddings are spectral
// features of the clip pushed through a seeded projection and normalized.
// Everything downstream only relies on the interface: token matrices in
// prompt space, unit vectors in the aligned space, and the linear map
// between the two.

import { readFileSync } from 'node:fs';

import { NbtTensor } from './nbt';
import { Rng, fnv1a, fnv1aBytes, mixSeeds } from './rng';
import { decodeWav } from './wav';

export class CheckpointError extends Error {}

export interface Checkpoint {
    format: string;
    version: number;
    dSd: number;
    dClip: number;
    seed: number;
}

const CHECKPOINT_FORMAT = 'reference-encoder';
const CHECKPOINT_VERSION = 1;

export function loadCheckpoint(path: string): Checkpoint {
    let parsed: Record<string, unknown>;
    try {
        parsed = JSON.parse(readFileSync(path, 'utf-8'));
    } catch (err) {
        throw new CheckpointError(`cannot read checkpoint ${path}: ${err}`);
    }
    const { format, version, d_sd, d_clip, seed } = parsed as {
        format?: unknown; version?: unknown; d_sd?: unknown;
        d_clip?: unknown; seed?: unknown;
    };
    if (format !== CHECKPOINT_FORMAT) {
        throw new CheckpointError(
            `checkpoint mismatch: expected format "${CHECKPOINT_FORMAT}", got ${JSON.stringify(format)}`,
        );
    }
    if (version !== CHECKPOINT_VERSION) {
        throw new CheckpointError(
            `checkpoint mismatch: expected version ${CHECKPOINT_VERSION}, got ${JSON.stringify(version)}`,
        );
    }
    for (const [name, value] of Object.entries({ d_sd, d_clip, seed })) {
        if (typeof value !== 'number' || !Number.isInteger(value) || value < 1) {
            throw new CheckpointError(`checkpoint mismatch: bad ${name}: ${JSON.stringify(value)}`);
        }
    }
    return {
        format: CHECKPOINT_FORMAT,
        version: CHECKPOINT_VERSION,
        dSd: d_sd as number,
        dClip: d_clip as number,
        seed: seed as number,
    };
}

export class ReferenceEncoder {
    constructor(readonly checkpoint: Checkpoint) {}

    /** Prompt -> L x d_sd token matrix, special start/end rows included. */
    textEmbedding(prompt: string): NbtTensor {
        const tokens = tokenize(prompt);
        const rows = ['<|start|>', ...tokens, '<|end|>'];
        const { dSd } = this.checkpoint;
        const data = new Float32Array(rows.length * dSd);
        rows.forEach((token, row) => {
            data.set(this.tokenVector(token), row * dSd);
        });
        return { dtype: 'float32', shape: [rows.length, dSd], data };
    }

    /** Media file -> unit-norm d_clip vector in the aligned space. */
    audioEmbedding(mediaPath: string): NbtTensor {
        const clip = decodeWav(readFileSync(mediaPath));
        const features = audioFeatures(clip.samples, clip.sampleRate);
        const { dClip } = this.checkpoint;
        const rng = new Rng(mixSeeds(this.checkpoint.seed, fnv1a('audio-projection')));
        const out = new Float32Array(dClip);
        // seeded dense projection of the feature vector, then L2 normalize
        for (let i = 0; i < dClip; i++) {
            let acc = 0;
            for (let j = 0; j < features.length; j++) {
                acc += rng.gaussian() * features[j];
            }
            out[i] = acc;
        }
        let norm = 0;
        for (const value of out) norm += value * value;
        norm = Math.sqrt(norm);
        if (!(norm > 0)) {
            throw new CheckpointError('audio embedding collapsed to zero'); // unreachable: bias feature
        }
        for (let i = 0; i < dClip; i++) out[i] /= norm;
        return { dtype: 'float32', shape: [dClip], data: out };
    }

    /** The learned bias-free map between prompt space and aligned space. */
    projectionMatrix(): NbtTensor {
        const { dSd, dClip } = this.checkpoint;
        const rng = new Rng(mixSeeds(this.checkpoint.seed, fnv1a('projection-matrix')));
        const data = rng.gaussianArray(dClip * dSd);
        const scale = 1.0 / Math.sqrt(dSd);
        for (let i = 0; i < data.length; i++) data[i] *= scale;
        return { dtype: 'float32', shape: [dClip, dSd], data };
    }

    /** Best effort: a latent-shaped tensor seeded from the source bytes. */
    latent(sourcePath: string, channels = 4, height = 64, width = 64): NbtTensor {
        const digest = fnv1aBytes(readFileSync(sourcePath));
        const rng = new Rng(mixSeeds(this.checkpoint.seed, mixSeeds(digest, fnv1a('latent'))));
        return {
            dtype: 'float32',
            shape: [channels, height, width],
            data: rng.gaussianArray(channels * height * width),
        };
    }

    private tokenVector(token: string): Float32Array {
        const rng = new Rng(mixSeeds(this.checkpoint.seed, fnv1a(`token:${token}`)));
        return rng.gaussianArray(this.checkpoint.dSd);
    }
}

export function tokenize(prompt: string): string[] {
    return prompt
        .toLowerCase()
        .split(/[^a-z0-9]+/)
        .filter((token) => token.length > 0);
}

// Fixed log-spaced Goertzel bins plus RMS, zero crossings, and a bias term
// (the bias keeps silent clips off the zero vector).
const BIN_FREQUENCIES_HZ = [
    50, 80, 125, 200, 315, 500, 800, 1250, 2000, 3150, 5000, 8000,
];

export function audioFeatures(samples: Float32Array, sampleRate: number): Float32Array {
    const features = new Float32Array(BIN_FREQUENCIES_HZ.length + 3);
    BIN_FREQUENCIES_HZ.forEach((hz, i) => {
        features[i] = hz * 2 < sampleRate ? goertzelPower(samples, sampleRate, hz) : 0;
    });
    let energy = 0;
    let crossings = 0;
    for (let i = 0; i < samples.length; i++) {
        energy += samples[i] * samples[i];
        if (i > 0 && samples[i - 1] < 0 !== samples[i] < 0) crossings++;
    }
    const n = Math.max(samples.length, 1);
    features[BIN_FREQUENCIES_HZ.length] = Math.sqrt(energy / n); // RMS
    features[BIN_FREQUENCIES_HZ.length + 1] = crossings / n;
    features[BIN_FREQUENCIES_HZ.length + 2] = 1.0; // bias
    return features;
}

function goertzelPower(samples: Float32Array, sampleRate: number, hz: number): number {
    const omega = (2 * Math.PI * hz) / sampleRate;
    const coeff = 2 * Math.cos(omega);
    let sPrev = 0;
    let sPrev2 = 0;
    for (let i = 0; i < samples.length; i++) {
        const s = samples[i] + coeff * sPrev - sPrev2;
        sPrev2 = sPrev;
        sPrev = s;
    }
    const power = sPrev * sPrev + sPrev2 * sPrev2 - coeff * sPrev * sPrev2;
    return Math.sqrt(Math.max(power, 0)) / Math.max(samples.length, 1);
}
