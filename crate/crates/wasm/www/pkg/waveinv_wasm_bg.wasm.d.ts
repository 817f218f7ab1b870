/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_cgoimage_free: (a: number, b: number) => void;
export const __wbg_frames_free: (a: number, b: number) => void;
export const cgo: (a: number, b: number, c: number) => [number, number, number];
export const cgoimage_n: (a: number) => number;
export const cgoimage_re: (a: number) => [number, number];
export const cgoimage_remainder_l2: (a: number) => number;
export const control: (a: number, b: number, c: number) => [number, number, number];
export const frames_energy: (a: number) => [number, number];
export const frames_n_frames: (a: number) => number;
export const frames_note: (a: number) => [number, number];
export const frames_times: (a: number) => [number, number];
export const frames_values: (a: number) => [number, number];
export const frames_x: (a: number) => [number, number];
export const simulate: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
