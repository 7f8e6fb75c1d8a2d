import type { RasterRle, RlePair } from './types';

export function decodeRow(runs: RlePair[]): number[] {
  const out: number[] = [];
  for (const [value, count] of runs) {
    for (let i = 0; i < count; i++) out.push(value);
  }
  return out;
}

export function encodeRow(row: number[]): RlePair[] {
  const runs: RlePair[] = [];
  for (const value of row) {
    const last = runs[runs.length - 1];
    if (last && last[0] === value) last[1] += 1;
    else runs.push([value, 1]);
  }
  return runs;
}

/** Decode a full raster; throws if any row disagrees with the header width. */
export function decodeRaster(raster: RasterRle): number[][] {
  const rows = raster.rows.map(decodeRow);
  if (rows.length !== raster.height) {
    throw new Error(`raster has ${rows.length} rows, header says ${raster.height}`);
  }
  for (const row of rows) {
    if (row.length !== raster.width) {
      throw new Error(`row of ${row.length} cells, header says ${raster.width}`);
    }
  }
  return rows;
}

export function encodeRaster(
  rows: number[][],
  origin: [number, number],
  cell: number,
): RasterRle {
  return {
    width: rows[0]?.length ?? 0,
    height: rows.length,
    origin,
    cell,
    rows: rows.map(encodeRow),
  };
}
