/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const scene_ground_filter: (a: number, b: number) => [number, number];
export const scene_infrastructure_points: (a: number) => [number, number];
export const scene_new: (a: bigint, b: number) => [number, number, number];
export const scene_shape_context: (a: number, b: number, c: number, d: number) => [number, number];
export const scene_vehicle_points: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
