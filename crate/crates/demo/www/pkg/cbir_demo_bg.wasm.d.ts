/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo2d_free: (a: number, b: number) => void;
export const demo2d_mark: (a: number, b: number, c: number) => [number, number];
export const demo2d_new: (a: number, b: number) => [number, number, number];
export const demo2d_points: (a: number) => [number, number, number, number];
export const demo2d_refine: (a: number, b: number, c: number) => [number, number, number, number];
export const demo2d_unmark: (a: number, b: number) => void;
export const ndcg: (a: number, b: number) => [number, number, number, number];
export const pool: (a: number, b: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
