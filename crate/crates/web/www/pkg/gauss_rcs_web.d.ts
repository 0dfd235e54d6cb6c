/* tslint:disable */
/* eslint-disable */

/**
 * A rendered synthetic sequence with its model, ready for matching.
 */
export class MatchDemo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Gaussian means as xyz triples, world frame.
     */
    means(): Float64Array;
    /**
     * `scene` is `"plaza"` or `"corridor"`; 20 scans of 200 returns.
     */
    constructor(scene: string, seed: number);
    /**
     * Returns of one scan as xyz triples, sensor frame.
     */
    points(scan: number): Float64Array;
    /**
     * Perturbs the true pose of `scan` and matches from there. One row of
     * [`TRACE_ROW`] values per step, the first being the start:
     * `iteration, accepted, cost, trans_err (m), rot_err (deg), tx, ty, tz,
     * qx, qy, qz, qw`.
     */
    run(scan: number, w_rcs: number, noise_trans: number, noise_rot: number, seed: number): Float64Array;
    scanCount(): number;
    /**
     * True pose of a scan as `tx ty tz qx qy qz qw`.
     */
    truePose(scan: number): Float64Array;
}

/**
 * Row-major `size × size` image of the field over the x ≤ 0 hemisphere;
 * pixels outside the disk are NaN.
 */
export function fieldGrid(coeffs: Float64Array, size: number): Float64Array;

/**
 * Samples `samples` hemisphere directions of the planted field, adds
 * Gaussian noise and fits. Layout: 16 fitted coefficients, the fitted
 * degree, the RMS error against the planted field over 500 probes, then
 * the sample directions as xyz triples.
 */
export function fitSamples(coeffs: Float64Array, samples: number, noise: number, max_degree: number, seed: number): Float64Array;

/**
 * Random field with per-degree amplitudes shrinking as 1, 0.75, 0.5 of
 * `amplitude`.
 */
export function randomField(seed: number, amplitude: number): Float64Array;

export function traceRowLength(): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_matchdemo_free: (a: number, b: number) => void;
    readonly fieldGrid: (a: number, b: number, c: number) => [number, number, number, number];
    readonly fitSamples: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly matchdemo_means: (a: number) => [number, number];
    readonly matchdemo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly matchdemo_points: (a: number, b: number) => [number, number];
    readonly matchdemo_run: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly matchdemo_scanCount: (a: number) => number;
    readonly matchdemo_truePose: (a: number, b: number) => [number, number];
    readonly randomField: (a: number, b: number) => [number, number];
    readonly traceRowLength: () => number;
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
