/* tslint:disable */
/* eslint-disable */

/**
 * One long prompt followed by `n_short` 8K prompts `spacing_ms` apart,
 * scheduled by the named prefill policy.
 */
export function hol_timeline(policy: string, n_short: number, spacing_ms: number): string;

/**
 * SLO attainment of the baseline and the SLO-aware pair over a rate sweep
 * of the synthetic long-tail workload.
 */
export function qps_sweep(n_requests: number, qps_start: number, qps_stop: number, points: number, seed: number): string;

/**
 * Two requests decoding side by side under the named decode policy.
 */
export function straggler_timeline(policy: string, short_len: number, long_len: number, output_len: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly hol_timeline: (a: number, b: number, c: number, d: number) => [number, number];
    readonly qps_sweep: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly straggler_timeline: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
