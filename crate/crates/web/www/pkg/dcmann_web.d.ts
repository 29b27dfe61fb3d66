/* tslint:disable */
/* eslint-disable */

/**
 * Allocation weighting of a usage vector.
 */
export function allocationWeighting(usage: Float64Array): Float64Array;

/**
 * Softmax of `beta * cos(row, key)` over the rows of `memory`
 * (row-major, `word` columns).
 */
export function contentWeighting(memory: Float64Array, word: number, key: Float64Array, beta: number): Float64Array;

export function oddEvenTarget(odds: Uint32Array): Uint32Array;

/**
 * JSON trace of an untrained network run on a list of odd numbers.
 */
export function writeTrace(variant: string, odds: Uint32Array, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly allocationWeighting: (a: number, b: number) => [number, number, number, number];
    readonly contentWeighting: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly oddEvenTarget: (a: number, b: number) => [number, number];
    readonly writeTrace: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
