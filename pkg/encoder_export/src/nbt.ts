// .nbt tensor files, bit-compatible with the engine's reader:
// magic "NBT1", dtype byte (0 = f32, 1 = f64), rank byte,
// rank x 8-byte little-endian unsigned extents, row-major LE payload.

const MAGIC = 'NBT1';

export type NbtDtype = 'float32' | 'float64';

export interface NbtTensor {
    dtype: NbtDtype;
    shape: number[];
    data: Float32Array | Float64Array;
}

export class NbtError extends Error {}

function numel(shape: number[]): number {
    return shape.reduce((a, b) => a * b, 1);
}

export function encodeTensor(tensor: NbtTensor): Buffer {
    const { dtype, shape, data } = tensor;
    if (data.length !== numel(shape)) {
        throw new NbtError(`data length ${data.length} does not match shape [${shape}]`);
    }
    for (const value of data) {
        if (!Number.isFinite(value)) {
            throw new NbtError('refusing to write non-finite values');
        }
    }
    if (shape.length > 255) {
        throw new NbtError(`rank ${shape.length} exceeds the format limit of 255`);
    }
    const itemSize = dtype === 'float32' ? 4 : 8;
    const buffer = Buffer.alloc(6 + 8 * shape.length + itemSize * data.length);
    buffer.write(MAGIC, 0, 'ascii');
    buffer.writeUInt8(dtype === 'float32' ? 0 : 1, 4);
    buffer.writeUInt8(shape.length, 5);
    let offset = 6;
    for (const extent of shape) {
        if (!Number.isInteger(extent) || extent < 0) {
            throw new NbtError(`bad extent ${extent}`);
        }
        buffer.writeBigUInt64LE(BigInt(extent), offset);
        offset += 8;
    }
    for (let i = 0; i < data.length; i++) {
        if (dtype === 'float32') {
            buffer.writeFloatLE(data[i], offset);
            offset += 4;
        } else {
            buffer.writeDoubleLE(data[i], offset);
            offset += 8;
        }
    }
    return buffer;
}

export function decodeTensor(buffer: Buffer): NbtTensor {
    if (buffer.length < 6) {
        throw new NbtError('stream ended inside the header');
    }
    if (buffer.toString('ascii', 0, 4) !== MAGIC) {
        throw new NbtError(`expected magic ${MAGIC}`);
    }
    const code = buffer.readUInt8(4);
    if (code !== 0 && code !== 1) {
        throw new NbtError(`unknown dtype code ${code}`);
    }
    const dtype: NbtDtype = code === 0 ? 'float32' : 'float64';
    const rank = buffer.readUInt8(5);
    if (buffer.length < 6 + 8 * rank) {
        throw new NbtError('stream ended inside the shape');
    }
    const shape: number[] = [];
    for (let i = 0; i < rank; i++) {
        shape.push(Number(buffer.readBigUInt64LE(6 + 8 * i)));
    }
    const itemSize = code === 0 ? 4 : 8;
    const count = numel(shape);
    const start = 6 + 8 * rank;
    if (buffer.length < start + count * itemSize) {
        throw new NbtError('stream ended inside the payload');
    }
    const data = dtype === 'float32' ? new Float32Array(count) : new Float64Array(count);
    for (let i = 0; i < count; i++) {
        data[i] =
            dtype === 'float32'
                ? buffer.readFloatLE(start + 4 * i)
                : buffer.readDoubleLE(start + 8 * i);
        if (!Number.isFinite(data[i])) {
            throw new NbtError('payload contains non-finite values');
        }
    }
    return { dtype, shape, data };
}
