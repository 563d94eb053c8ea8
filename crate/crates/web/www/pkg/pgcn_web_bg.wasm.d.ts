/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_filterview_free: (a: number, b: number) => void;
export const __wbg_graphview_free: (a: number, b: number) => void;
export const band_filter: (a: number, b: number) => [number, number, number];
export const default_bands: () => [number, number];
export const filterview_filtered: (a: number) => [number, number];
export const filterview_kept_energy: (a: number) => number;
export const filterview_raw: (a: number) => [number, number];
export const graphview_edges: (a: number) => [number, number];
export const graphview_isolated: (a: number) => number;
export const graphview_mean_degree: (a: number) => number;
export const graphview_names: (a: number) => [number, number];
export const graphview_xy: (a: number) => [number, number];
export const scalp_map: (a: number, b: number) => [number, number, number, number];
export const static_graph: (a: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
