/* tslint:disable */
/* eslint-disable */

/**
 * Mean error curves of diminishing-stepsize TD and of the variance-reduced
 * extrapolated method on the two-state chain at an equal sample budget.
 */
export function compare_methods(gamma: number, budget: number, trials: number, seed: number): string;

/**
 * Exact-operator TD on the cyclic hard instance against the oracle lower
 * bound, for `k = 0..=queries` evaluations.
 */
export function oracle_race(gamma: number, num_states: number, queries: number): string;

/**
 * Value function, covariance trace and the resulting error floor
 * `trace / budget` of the two-state chain.
 */
export function two_state_bound(gamma: number, budget: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly compare_methods: (a: number, b: number, c: number, d: number) => [number, number];
    readonly oracle_race: (a: number, b: number, c: number) => [number, number];
    readonly two_state_bound: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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
