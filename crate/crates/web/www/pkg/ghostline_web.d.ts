/* tslint:disable */
/* eslint-disable */

/**
 * A recorded demonstration and the playback setup it is replayed in.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Wall-clock playback length at `speed`, s.
     */
    duration(speed: number): number;
    /**
     * Estimated overlay at `clock`, flattened as `[n, x, y, ...]` per component.
     */
    frame(clock: number, speed: number): Float64Array;
    height(): number;
    /**
     * Generates the synthetic world for `seed` and runs registration,
     * calibration and recording.
     */
    constructor(seed: number, preset: string);
    summary(): string;
    /**
     * Ground-truth overlay at `clock`, same layout as `frame`.
     */
    truth_frame(clock: number, speed: number): Float64Array;
    width(): number;
}

/**
 * Full synthetic evaluation for one seed, as `key value` lines.
 */
export function evaluate(seed: number, preset: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_duration: (a: number, b: number) => [number, number, number];
    readonly demo_frame: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_height: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_summary: (a: number) => [number, number];
    readonly demo_truth_frame: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_width: (a: number) => number;
    readonly evaluate: (a: number, b: number, c: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
