/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const binomialBound: (a: number, b: number, c: number) => [number, number, number];
export const demo_mbis: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const demo_mean: (a: number, b: number) => [number, number];
export const demo_new: (a: number, b: number, c: number) => [number, number, number];
export const demo_points: (a: number) => [number, number];
export const demo_regionMask: (a: number, b: number, c: number, d: number) => [number, number];
export const demo_sd: (a: number, b: number) => [number, number];
export const demo_theta: (a: number) => number;
export const toySurface: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
