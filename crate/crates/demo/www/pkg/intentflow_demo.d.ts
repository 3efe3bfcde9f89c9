/* tslint:disable */
/* eslint-disable */

/**
 * A small dataset, a model and its training state.
 */
export class Playground {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Fits the single-pass student; returns the number of steps it ran.
     */
    distill(): number;
    has_student(): boolean;
    /**
     * Replaces the model with a checkpoint written by the command-line tool.
     */
    load_checkpoint(bytes: Uint8Array): void;
    /**
     * Per-step FM loss so far.
     */
    loss_history(): string;
    /**
     * `sequences` synthetic sequences trained for `epochs` epochs.
     */
    constructor(sequences: number, epochs: number, seed: bigint);
    /**
     * Number of ambiguous scenes available to [`Playground::sweep`].
     */
    num_scenes(): number;
    /**
     * Samples every admissible intent (or all 20) for one ambiguous scene
     * from shared noise, with guidance `w` or through the student.
     */
    sweep(scene: number, w: number, distilled: boolean, all_intents: boolean, noise_seed: bigint): string;
    /**
     * Runs up to `steps` optimizer steps and reports progress.
     */
    train(steps: number): string;
}

export function intent_names(): string;

/**
 * Generates the maneuver family of `intent` and labels its first 3 s.
 */
export function maneuver(intent: string, speed: number, noise_sigma: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_playground_free: (a: number, b: number) => void;
    readonly intent_names: () => [number, number];
    readonly maneuver: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly playground_distill: (a: number) => [number, number, number];
    readonly playground_has_student: (a: number) => number;
    readonly playground_load_checkpoint: (a: number, b: number, c: number) => [number, number];
    readonly playground_loss_history: (a: number) => [number, number];
    readonly playground_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly playground_num_scenes: (a: number) => number;
    readonly playground_sweep: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly playground_train: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
