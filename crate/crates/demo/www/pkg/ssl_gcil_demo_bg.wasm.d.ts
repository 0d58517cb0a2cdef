/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const augment_preview: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const expected_lags: (a: number) => [number, number, number, number];
export const gcc_features: (a: number, b: number, c: number) => [number, number, number, number];
export const long_tail: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
