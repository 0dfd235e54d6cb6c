/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_matchdemo_free: (a: number, b: number) => void;
export const fieldGrid: (a: number, b: number, c: number) => [number, number, number, number];
export const fitSamples: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const matchdemo_means: (a: number) => [number, number];
export const matchdemo_new: (a: number, b: number, c: number) => [number, number, number];
export const matchdemo_points: (a: number, b: number) => [number, number];
export const matchdemo_run: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const matchdemo_scanCount: (a: number) => number;
export const matchdemo_truePose: (a: number, b: number) => [number, number];
export const randomField: (a: number, b: number) => [number, number];
export const traceRowLength: () => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
