/* tslint:disable */
/* eslint-disable */

/**
 * Real part of a 2D CGO solution at the last level, row-major `ny x nx` (y fastest last).
 */
export class CgoImage {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    n(): number;
    re(): Float64Array;
    remainder_l2(): number;
}

/**
 * Space-time samples of a 1D solution, frames in time order.
 */
export class Frames {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    energy(): Float64Array;
    n_frames(): number;
    note(): string;
    times(): Float64Array;
    /**
     * Row-major `(frame, node)`.
     */
    values(): Float64Array;
    x(): Float64Array;
}

export function cgo(tau: number, n: number, q_amp: number): CgoImage;

export function control(nx: number, t_final: number, both_ends: boolean): Frames;

export function simulate(nx: number, t_final: number, c: number, amplitude: number, mode: number): Frames;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_cgoimage_free: (a: number, b: number) => void;
    readonly __wbg_frames_free: (a: number, b: number) => void;
    readonly cgo: (a: number, b: number, c: number) => [number, number, number];
    readonly cgoimage_n: (a: number) => number;
    readonly cgoimage_re: (a: number) => [number, number];
    readonly cgoimage_remainder_l2: (a: number) => number;
    readonly control: (a: number, b: number, c: number) => [number, number, number];
    readonly frames_energy: (a: number) => [number, number];
    readonly frames_n_frames: (a: number) => number;
    readonly frames_note: (a: number) => [number, number];
    readonly frames_times: (a: number) => [number, number];
    readonly frames_values: (a: number) => [number, number];
    readonly frames_x: (a: number) => [number, number];
    readonly simulate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
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
