/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_latticedemo_free: (a: number, b: number) => void;
export const fuse_sequence: (a: number, b: number) => [number, number];
export const latticedemo_anchor_col: (a: number) => number;
export const latticedemo_anchor_row: (a: number) => number;
export const latticedemo_clear: (a: number) => void;
export const latticedemo_cols: (a: number) => number;
export const latticedemo_is_blocked: (a: number, b: number, c: number) => number;
export const latticedemo_last_cost: (a: number) => number;
export const latticedemo_last_partial: (a: number) => number;
export const latticedemo_new: () => number;
export const latticedemo_plan: (a: number, b: number, c: number, d: number) => [number, number];
export const latticedemo_rows: (a: number) => number;
export const latticedemo_toggle: (a: number, b: number, c: number) => number;
export const safe_speed_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const standstill_distance: (a: number, b: number, c: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
