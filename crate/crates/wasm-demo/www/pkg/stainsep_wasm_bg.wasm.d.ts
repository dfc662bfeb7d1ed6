/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const scene_estimate_rgba: (a: number, b: number) => [number, number];
export const scene_estimated_spectra: (a: number) => [number, number];
export const scene_iterations: (a: number) => number;
export const scene_mixed_rgba: (a: number) => [number, number];
export const scene_new: (a: number, b: bigint, c: number, d: number, e: number, f: number, g: number, h: number, i: number, j: number) => [number, number, number];
export const scene_scores: (a: number) => [number, number, number, number];
export const scene_size: (a: number) => number;
export const scene_truth_rgba: (a: number, b: number) => [number, number];
export const scene_unmix: (a: number, b: number, c: number, d: number, e: bigint) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
