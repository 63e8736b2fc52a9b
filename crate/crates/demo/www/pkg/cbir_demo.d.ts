/* tslint:disable */
/* eslint-disable */

export class Demo2d {
    free(): void;
    [Symbol.dispose](): void;
    mark(i: number, relevant: boolean): void;
    constructor(seed: number, items: number);
    points(): string;
    refine(method: string): string;
    unmark(i: number): void;
}

export function ndcg(request: string): string;

/**
 * Pools a feature map; see [`super::pool_json`].
 */
export function pool(request: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo2d_free: (a: number, b: number) => void;
    readonly demo2d_mark: (a: number, b: number, c: number) => [number, number];
    readonly demo2d_new: (a: number, b: number) => [number, number, number];
    readonly demo2d_points: (a: number) => [number, number, number, number];
    readonly demo2d_refine: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo2d_unmark: (a: number, b: number) => void;
    readonly ndcg: (a: number, b: number) => [number, number, number, number];
    readonly pool: (a: number, b: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
