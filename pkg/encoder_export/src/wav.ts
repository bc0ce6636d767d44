// Minimal RIFF/WAVE reader: PCM 8/16/32-bit and float32, downmixed to mono.

export class WavError extends Error {}

export interface WavClip {
    sampleRate: number;
    samples: Float32Array; // mono, in [-1, 1]
}

export function decodeWav(buffer: Buffer): WavClip {
    if (buffer.length < 12 || buffer.toString('ascii', 0, 4) !== 'RIFF' ||
        buffer.toString('ascii', 8, 12) !== 'WAVE') {
        throw new WavError('not a RIFF/WAVE file');
    }
    let offset = 12;
    let format: number | null = null;
    let channels = 0;
    let sampleRate = 0;
    let bitsPerSample = 0;
    let data: Buffer | null = null;
    while (offset + 8 <= buffer.length) {
        const chunkId = buffer.toString('ascii', offset, offset + 4);
        const chunkSize = buffer.readUInt32LE(offset + 4);
        const body = buffer.subarray(offset + 8, offset + 8 + chunkSize);
        if (chunkId === 'fmt ') {
            if (body.length < 16) throw new WavError('truncated fmt chunk');
            format = body.readUInt16LE(0);
            channels = body.readUInt16LE(2);
            sampleRate = body.readUInt32LE(4);
            bitsPerSample = body.readUInt16LE(14);
        } else if (chunkId === 'data') {
            data = body;
        }
        offset += 8 + chunkSize + (chunkSize % 2); // chunks are word-aligned
    }
    if (format === null || data === null) {
        throw new WavError('missing fmt or data chunk');
    }
    if (channels < 1 || sampleRate < 1) {
        throw new WavError(`bad fmt: ${channels} channels @ ${sampleRate} Hz`);
    }

    const bytesPerSample = bitsPerSample / 8;
    const frameCount = Math.floor(data.length / (bytesPerSample * channels));
    const mono = new Float32Array(frameCount);
    for (let frame = 0; frame < frameCount; frame++) {
        let acc = 0;
        for (let ch = 0; ch < channels; ch++) {
            const at = (frame * channels + ch) * bytesPerSample;
            if (format === 1 && bitsPerSample === 16) {
                acc += data.readInt16LE(at) / 32768;
            } else if (format === 1 && bitsPerSample === 8) {
                acc += (data.readUInt8(at) - 128) / 128;
            } else if (format === 1 && bitsPerSample === 32) {
                acc += data.readInt32LE(at) / 2147483648;
            } else if (format === 3 && bitsPerSample === 32) {
                acc += data.readFloatLE(at);
            } else {
                throw new WavError(
                    `unsupported encoding: format ${format}, ${bitsPerSample}-bit`,
                );
            }
        }
        mono[frame] = acc / channels;
    }
    return { sampleRate, samples: mono };
}

/** PCM16 mono encoder, for fixtures and round-trip tests. */
export function encodeWavPcm16(samples: Float32Array, sampleRate: number): Buffer {
    const data = Buffer.alloc(samples.length * 2);
    for (let i = 0; i < samples.length; i++) {
        const clamped = Math.max(-1, Math.min(1, samples[i]));
        data.writeInt16LE(Math.round(clamped * 32767), i * 2);
    }
    const buffer = Buffer.alloc(44 + data.length);
    buffer.write('RIFF', 0, 'ascii');
    buffer.writeUInt32LE(36 + data.length, 4);
    buffer.write('WAVE', 8, 'ascii');
    buffer.write('fmt ', 12, 'ascii');
    buffer.writeUInt32LE(16, 16);
    buffer.writeUInt16LE(1, 20); // PCM
    buffer.writeUInt16LE(1, 22); // mono
    buffer.writeUInt32LE(sampleRate, 24);
    buffer.writeUInt32LE(sampleRate * 2, 28);
    buffer.writeUInt16LE(2, 32);
    buffer.writeUInt16LE(16, 34);
    buffer.write('data', 36, 'ascii');
    buffer.writeUInt32LE(data.length, 40);
    data.copy(buffer, 44);
    return buffer;
}
