/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const multinomial_probs: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const noise_sine: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
export const schedule_curves: (a: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
