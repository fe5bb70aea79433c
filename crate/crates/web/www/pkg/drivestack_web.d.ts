/* tslint:disable */
/* eslint-disable */

/**
 * A 20 m × 12 m map with the vehicle near the bottom edge facing up.
 */
export class LatticeDemo {
    free(): void;
    [Symbol.dispose](): void;
    anchor_col(): number;
    anchor_row(): number;
    clear(): void;
    cols(): number;
    is_blocked(row: number, col: number): boolean;
    /**
     * Lattice cost of the last plan, or `∞` when it failed.
     */
    last_cost(): number;
    /**
     * The last plan stopped short of the goal because the search budget ran out.
     */
    last_partial(): boolean;
    constructor();
    /**
     * Plans from the vehicle to the goal cell at `heading_deg` (0 = up, positive = left).
     * Returns the path as flattened `(row, col)` pairs in fractional cell units, or an
     * empty array when no path exists.
     */
    plan(goal_row: number, goal_col: number, heading_deg: number): Float64Array;
    rows(): number;
    /**
     * Flips a cell between free and obstacle; returns the new state.
     */
    toggle(row: number, col: number): boolean;
}

/**
 * Posterior occupancy of one cell after each observation in turn, starting from 0.5.
 * Observations equal to 0.5 carry no evidence.
 */
export function fuse_sequence(observations: Float64Array): Float64Array;

/**
 * `samples` evenly spaced `(distance, speed)` pairs over `[0, max_dist]`, flattened.
 */
export function safe_speed_curve(v_max: number, c: number, d: number, max_dist: number, samples: number): Float64Array;

export function standstill_distance(v_max: number, c: number, d: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_latticedemo_free: (a: number, b: number) => void;
    readonly fuse_sequence: (a: number, b: number) => [number, number];
    readonly latticedemo_anchor_col: (a: number) => number;
    readonly latticedemo_anchor_row: (a: number) => number;
    readonly latticedemo_clear: (a: number) => void;
    readonly latticedemo_cols: (a: number) => number;
    readonly latticedemo_is_blocked: (a: number, b: number, c: number) => number;
    readonly latticedemo_last_cost: (a: number) => number;
    readonly latticedemo_last_partial: (a: number) => number;
    readonly latticedemo_new: () => number;
    readonly latticedemo_plan: (a: number, b: number, c: number, d: number) => [number, number];
    readonly latticedemo_rows: (a: number) => number;
    readonly latticedemo_toggle: (a: number, b: number, c: number) => number;
    readonly safe_speed_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly standstill_distance: (a: number, b: number, c: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
