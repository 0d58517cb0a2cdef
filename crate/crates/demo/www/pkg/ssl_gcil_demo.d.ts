/* tslint:disable */
/* eslint-disable */

/**
 * Builds a tail class at `target_deg` from one frame of the class at
 * `donor_deg`. Returns `[donor | augmented | real target]`, each 306 values.
 */
export function augment_preview(donor_deg: number, target_deg: number, noise_scale: number, seed_value: number): Float64Array;

/**
 * Geometric lag (in samples) of each microphone pair for `doa_deg`.
 */
export function expected_lags(doa_deg: number): Float64Array;

/**
 * Six concatenated 51-lag segments for a source at `doa_deg`. A
 * non-finite `snr_db` renders a noiseless frame.
 */
export function gcc_features(doa_deg: number, snr_db: number, seed_value: number): Float64Array;

/**
 * Per-rank counts `⌊n_max·e^{-λ(c-1)}⌋` followed by their Gini
 * coefficient and the resulting adaptive regularizer.
 */
export function long_tail(lambda: number, n_max: number, n_classes: number, gamma0: number, reg_exponent: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly augment_preview: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly expected_lags: (a: number) => [number, number, number, number];
    readonly gcc_features: (a: number, b: number, c: number) => [number, number, number, number];
    readonly long_tail: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
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
