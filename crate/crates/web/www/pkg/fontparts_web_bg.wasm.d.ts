/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_biclusterview_free: (a: number, b: number) => void;
export const __wbg_glyphview_free: (a: number, b: number) => void;
export const averagePrecision: (a: number, b: number, c: number, d: number) => [number, number, number];
export const biclusterDemo: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
export const biclusterview_ari: (a: number) => number;
export const biclusterview_colLabels: (a: number) => [number, number];
export const biclusterview_cols: (a: number) => number;
export const biclusterview_rowLabels: (a: number) => [number, number];
export const biclusterview_rows: (a: number) => number;
export const biclusterview_values: (a: number) => [number, number];
export const glyphview_keypointCount: (a: number) => number;
export const glyphview_keypoints: (a: number) => [number, number];
export const glyphview_pixels: (a: number) => [number, number];
export const glyphview_size: (a: number) => number;
export const renderGlyph: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
