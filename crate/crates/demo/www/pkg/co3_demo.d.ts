/* tslint:disable */
/* eslint-disable */

/**
 * One generated scene pair held on the Rust side.
 */
export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[kept vehicle points, vehicle voxels, fusion voxels, shared voxels]`
     * after dropping points below `z_thd`.
     */
    ground_filter(z_thd: number): Uint32Array;
    /**
     * Infrastructure points moved into the vehicle frame, as `x, y, z`
     * triples.
     */
    infrastructure_points(): Float32Array;
    constructor(seed: bigint, objects: number);
    /**
     * Finalized shape context of the vehicle point nearest to `(x, y)` in the
     * ground plane, among all vehicle points. The first three entries are the
     * chosen point; the 32 bins follow.
     */
    shape_context(x: number, y: number, sf_csp: number): Float64Array;
    /**
     * Vehicle-view points as `x, y, z, class` quadruples.
     */
    vehicle_points(): Float32Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_ground_filter: (a: number, b: number) => [number, number];
    readonly scene_infrastructure_points: (a: number) => [number, number];
    readonly scene_new: (a: bigint, b: number) => [number, number, number];
    readonly scene_shape_context: (a: number, b: number, c: number, d: number) => [number, number];
    readonly scene_vehicle_points: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
