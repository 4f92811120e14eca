/* tslint:disable */
/* eslint-disable */

/**
 * A noisy planted checkerboard and the recovered biclustering.
 */
export class BiclusterView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    colLabels(): Uint32Array;
    rowLabels(): Uint32Array;
    /**
     * Row-major matrix values.
     */
    values(): Float64Array;
    /**
     * The worse of the row and column adjusted Rand indices.
     */
    readonly ari: number;
    readonly cols: number;
    readonly rows: number;
}

/**
 * A rendered glyph and its keypoints.
 */
export class GlyphView {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Flat `x, y, sigma, orientation` quadruples in glyph pixels.
     */
    keypoints(): Float32Array;
    /**
     * Row-major grey levels, `size * size` bytes.
     */
    pixels(): Uint8Array;
    readonly keypointCount: number;
    readonly size: number;
}

/**
 * AP of ranking items by `scores` (descending, ties by position) when the
 * items flagged in `relevant` are the correct ones.
 */
export function averagePrecision(scores: Float64Array, relevant: Uint8Array): number;

export function biclusterDemo(rows: number, cols: number, row_clusters: number, col_clusters: number, noise: number, seed: bigint): BiclusterView;

export function renderGlyph(letter: string, serif: boolean, jaggy: boolean, rounded: boolean, constant_stroke: boolean, size: number, seed: bigint): GlyphView;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_biclusterview_free: (a: number, b: number) => void;
    readonly __wbg_glyphview_free: (a: number, b: number) => void;
    readonly averagePrecision: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly biclusterDemo: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
    readonly biclusterview_ari: (a: number) => number;
    readonly biclusterview_colLabels: (a: number) => [number, number];
    readonly biclusterview_cols: (a: number) => number;
    readonly biclusterview_rowLabels: (a: number) => [number, number];
    readonly biclusterview_rows: (a: number) => number;
    readonly biclusterview_values: (a: number) => [number, number];
    readonly glyphview_keypointCount: (a: number) => number;
    readonly glyphview_keypoints: (a: number) => [number, number];
    readonly glyphview_pixels: (a: number) => [number, number];
    readonly glyphview_size: (a: number) => number;
    readonly renderGlyph: (a: number, b: number, c: number, d: number, e: number, f: number, g: bigint) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
