// Export manifests: a flat key-value document (same syntax as the engine's
// configs) listing one job per numbered prefix:
//
//   checkpoint = checkpoints/reference-encoder.json
//   job.1.kind = text-embedding
//   job.1.source = a photo of a cat
//   job.1.dest = out/cat_prompt.nbt
//   job.2.kind = audio-embedding
//   job.2.source = clips/waves.wav
//   job.2.dest = out/waves.nbt
//   job.3.kind = projection-matrix
//   job.3.dest = out/M.nbt

export class ManifestError extends Error {}

export const JOB_KINDS = [
    'text-embedding',
    'audio-embedding',
    'projection-matrix',
    'latent',
] as const;

export type JobKind = (typeof JOB_KINDS)[number];

export interface ExportJob {
    id: string;
    kind: JobKind;
    source: string | null; // prompt text or media path; none for projection-matrix
    dest: string;
}

export interface ExportManifest {
    checkpoint: string;
    jobs: ExportJob[];
}

export function readKeyValues(text: string): Map<string, string> {
    const entries = new Map<string, string>();
    text.split(/\r?\n/).forEach((raw, index) => {
        const line = raw.split('#', 1)[0].trim();
        if (!line) return;
        const eq = line.indexOf('=');
        if (eq < 0) {
            throw new ManifestError(`line ${index + 1}: expected 'key = value'`);
        }
        const key = line.slice(0, eq).trim();
        const value = line.slice(eq + 1).trim();
        if (!key) throw new ManifestError(`line ${index + 1}: empty key`);
        if (entries.has(key)) {
            throw new ManifestError(`line ${index + 1}: duplicate key "${key}"`);
        }
        entries.set(key, value);
    });
    return entries;
}

export function parseManifest(text: string): ExportManifest {
    const entries = readKeyValues(text);
    const checkpoint = entries.get('checkpoint');
    if (!checkpoint) {
        throw new ManifestError('missing required key "checkpoint"');
    }
    entries.delete('checkpoint');

    const fields = new Map<string, Map<string, string>>();
    for (const [key, value] of entries) {
        const parts = key.split('.');
        if (parts.length !== 3 || parts[0] !== 'job') {
            throw new ManifestError(`unknown key "${key}"`);
        }
        const [, id, field] = parts;
        if (!fields.has(id)) fields.set(id, new Map());
        fields.get(id)!.set(field, value);
    }

    const jobs: ExportJob[] = [];
    const destinations = new Set<string>();
    for (const id of [...fields.keys()].sort()) {
        const job = fields.get(id)!;
        const kind = job.get('kind');
        if (!kind || !(JOB_KINDS as readonly string[]).includes(kind)) {
            throw new ManifestError(
                `job ${id}: kind must be one of ${JOB_KINDS.join(', ')}, got "${kind}"`,
            );
        }
        const dest = job.get('dest');
        if (!dest) throw new ManifestError(`job ${id}: missing dest`);
        if (destinations.has(dest)) {
            throw new ManifestError(`job ${id}: duplicate destination "${dest}"`);
        }
        destinations.add(dest);
        const source = job.get('source') ?? null;
        if (kind !== 'projection-matrix' && source === null) {
            throw new ManifestError(`job ${id}: kind ${kind} needs a source`);
        }
        for (const field of job.keys()) {
            if (!['kind', 'source', 'dest'].includes(field)) {
                throw new ManifestError(`job ${id}: unknown field "${field}"`);
            }
        }
        jobs.push({ id, kind: kind as JobKind, source, dest });
    }
    if (jobs.length === 0) {
        throw new ManifestError('manifest lists no jobs');
    }
    return { checkpoint, jobs };
}
