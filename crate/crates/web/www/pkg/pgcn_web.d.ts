/* tslint:disable */
/* eslint-disable */

export class FilterView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    filtered(): Float64Array;
    raw(): Float64Array;
    /**
     * Fraction of the signal energy inside the band.
     */
    readonly kept_energy: number;
}

export class GraphView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Interleaved `i, j` pairs with `i < j`.
     */
    edges(): Uint32Array;
    names(): string[];
    /**
     * Interleaved `x, y` per electrode.
     */
    xy(): Float64Array;
    readonly isolated: number;
    readonly mean_degree: number;
}

export function band_filter(lo: number, hi: number): FilterView;

/**
 * Lower and upper edges of the default bands, interleaved.
 */
export function default_bands(): Float64Array;

export function scalp_map(seed: number, _class: number): Float64Array;

export function static_graph(radius: number): GraphView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_filterview_free: (a: number, b: number) => void;
    readonly __wbg_graphview_free: (a: number, b: number) => void;
    readonly band_filter: (a: number, b: number) => [number, number, number];
    readonly default_bands: () => [number, number];
    readonly filterview_filtered: (a: number) => [number, number];
    readonly filterview_kept_energy: (a: number) => number;
    readonly filterview_raw: (a: number) => [number, number];
    readonly graphview_edges: (a: number) => [number, number];
    readonly graphview_isolated: (a: number) => number;
    readonly graphview_mean_degree: (a: number) => number;
    readonly graphview_names: (a: number) => [number, number];
    readonly graphview_xy: (a: number) => [number, number];
    readonly scalp_map: (a: number, b: number) => [number, number, number, number];
    readonly static_graph: (a: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
