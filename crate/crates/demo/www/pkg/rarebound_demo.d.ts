/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Runs importance sampling in the region and returns the report as JSON.
     */
    mbis(rho: number, kappa: number, m: number, m_region: number, alpha: number, beta: number, seed: number): string;
    mean(res: number): Float64Array;
    /**
     * Evaluates the toy function on an `n`-point design and fits the model.
     */
    constructor(n: number, seed: number, anneal_iterations: number);
    /**
     * Design coordinates, flattened `x1, x2, x1, x2, ...`.
     */
    points(): Float64Array;
    regionMask(res: number, rho: number, kappa: number): Uint8Array;
    sd(res: number): Float64Array;
    theta(): number;
}

export function binomialBound(t: number, n: number, alpha: number): number;

export function toySurface(res: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly binomialBound: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_mbis: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly demo_mean: (a: number, b: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_points: (a: number) => [number, number];
    readonly demo_regionMask: (a: number, b: number, c: number, d: number) => [number, number];
    readonly demo_sd: (a: number, b: number) => [number, number];
    readonly demo_theta: (a: number) => number;
    readonly toySurface: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
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
