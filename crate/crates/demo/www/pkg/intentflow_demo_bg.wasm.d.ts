/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_playground_free: (a: number, b: number) => void;
export const intent_names: () => [number, number];
export const maneuver: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const playground_distill: (a: number) => [number, number, number];
export const playground_has_student: (a: number) => number;
export const playground_load_checkpoint: (a: number, b: number, c: number) => [number, number];
export const playground_loss_history: (a: number) => [number, number];
export const playground_new: (a: number, b: number, c: bigint) => [number, number, number];
export const playground_num_scenes: (a: number) => number;
export const playground_sweep: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
export const playground_train: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
