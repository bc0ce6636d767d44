export { encodeTensor, decodeTensor, NbtError } from './nbt';
export type { NbtTensor, NbtDtype } from './nbt';
export { ReferenceEncoder, loadCheckpoint, tokenize, audioFeatures, CheckpointError } from './encoder';
export type { Checkpoint } from './encoder';
export { parseManifest, readKeyValues, ManifestError, JOB_KINDS } from './manifest';
export type { ExportManifest, ExportJob, JobKind } from './manifest';
export { decodeWav, encodeWavPcm16, WavError } from './wav';
export type { WavClip } from './wav';
export { runExport, main } from './cli';
export { Rng, fnv1a, fnv1aBytes, mixSeeds } from './rng';
