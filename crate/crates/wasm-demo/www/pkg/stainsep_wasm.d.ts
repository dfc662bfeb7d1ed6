/* tslint:disable */
/* eslint-disable */

/**
 * A synthetic two-stain scene plus the latest unmixing estimate.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    estimate_rgba(stain: number): Uint8Array | undefined;
    /**
     * Estimated spectra, column by column.
     */
    estimated_spectra(): Float64Array;
    iterations(): number;
    mixed_rgba(): Uint8Array;
    /**
     * Renders a random mixture of two stains with the given RGB colors in `[0, 1]`.
     */
    constructor(size: number, seed: bigint, r1: number, g1: number, b1: number, r2: number, g2: number, b2: number, layout: string);
    scores(): Float64Array;
    size(): number;
    truth_rgba(stain: number): Uint8Array;
    unmix(method: string, iterations: number, seed: bigint): void;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_estimate_rgba: (a: number, b: number) => [number, number];
    readonly scene_estimated_spectra: (a: number) => [number, number];
    readonly scene_iterations: (a: number) => number;
    readonly scene_mixed_rgba: (a: number) => [number, number];
    readonly scene_new: (a: number, b: bigint, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number];
    readonly scene_scores: (a: number) => [number, number, number, number];
    readonly scene_size: (a: number) => number;
    readonly scene_truth_rgba: (a: number, b: number) => [number, number];
    readonly scene_unmix: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
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
