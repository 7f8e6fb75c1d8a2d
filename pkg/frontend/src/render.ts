import { decodeRaster } from './rle';
import type { Plan, RegistryRow, Snapshot } from './types';
import { OCC_FREE, OCC_UNKNOWN } from './types';

export const OCCUPANCY_COLORS: Record<number, string> = {
  0: '#ded9cb', // free
  1: '#7e2f2f', // obstacle
  2: '#32363e', // unknown
};
export const FRONTIER_COLOR = '#3a86c8';
export const USER_COLOR = '#f2b13c';
export const GOAL_COLOR = '#53d769';
export const ROUTE_COLOR = '#53d769';

/** Stable class color from a hue hash. */
export function classColor(classId: number, dimmed = false): string {
  const hue = (classId * 137.508) % 360;
  const light = dimmed ? 30 : 55;
  return `hsl(${hue.toFixed(1)}, 70%, ${light}%)`;
}

export interface CellStyle {
  fill: string;
  struck: boolean;
}

/**
 * Style of one semantic label cell: class hue, dimmed while Retained,
 * struck when Removed (a Removed id normally never reaches the raster).
 */
export function labelStyle(row: RegistryRow | undefined, classId: number): CellStyle {
  if (!row) return { fill: classColor(classId), struck: false };
  return {
    fill: classColor(row.class, row.state === 'Retained'),
    struck: row.state === 'Removed',
  };
}

/** Free cells 8-adjacent to at least one unknown cell. */
export function frontierCells(occupancy: number[][]): [number, number][] {
  const h = occupancy.length;
  const w = h ? occupancy[0].length : 0;
  const out: [number, number][] = [];
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      if (occupancy[r][c] !== OCC_FREE) continue;
      let adjacent = false;
      for (let dr = -1; dr <= 1 && !adjacent; dr++) {
        for (let dc = -1; dc <= 1; dc++) {
          const rr = r + dr;
          const cc = c + dc;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          if (occupancy[rr][cc] === OCC_UNKNOWN) {
            adjacent = true;
            break;
          }
        }
      }
      if (adjacent) out.push([r, c]);
    }
  }
  return out;
}

/** Waypoint cells as canvas-space centers; one vertex per waypoint. */
export function planPolyline(plan: Plan, cellPx: number): [number, number][] {
  return plan.waypoints.map(([r, c]) => [(c + 0.5) * cellPx, (r + 0.5) * cellPx]);
}

export interface MapModel {
  width: number;
  height: number;
  occupancy: number[][];
  label: number[][] | null;
  frontier: [number, number][];
  registryById: Map<number, RegistryRow>;
}

/** Decode the snapshot into everything the painter needs; throws on bad data. */
export function buildMapModel(snapshot: Snapshot): MapModel | null {
  const occ = snapshot.rasters.occupancy;
  if (!occ) return null;
  const occupancy = decodeRaster(occ);
  const label = snapshot.rasters.label ? decodeRaster(snapshot.rasters.label) : null;
  if (label && (label.length !== occ.height || (label[0]?.length ?? 0) !== occ.width)) {
    throw new Error('label raster does not match occupancy raster');
  }
  return {
    width: occ.width,
    height: occ.height,
    occupancy,
    label,
    frontier: frontierCells(occupancy),
    registryById: new Map(snapshot.registry.map((row) => [row.id, row])),
  };
}

export interface LegendEntry {
  label: string;
  color: string;
}

export function legendEntries(snapshot: Snapshot | null): LegendEntry[] {
  const entries: LegendEntry[] = [
    { label: 'unknown', color: OCCUPANCY_COLORS[2] },
    { label: 'free', color: OCCUPANCY_COLORS[0] },
    { label: 'obstacle', color: OCCUPANCY_COLORS[1] },
    { label: 'frontier', color: FRONTIER_COLOR },
    { label: 'user', color: USER_COLOR },
    { label: 'goal / route', color: GOAL_COLOR },
  ];
  const seen = new Set<number>();
  for (const row of snapshot?.registry ?? []) {
    if (seen.has(row.class)) continue;
    seen.add(row.class);
    entries.push({ label: `class ${row.class}`, color: classColor(row.class) });
  }
  return entries;
}

/**
 * Paint one snapshot. Layer order: unknown/free/obstacle base, semantic
 * labels, frontier cells, user position, goal, waypoint polyline.
 */
export function renderMap(
  ctx: CanvasRenderingContext2D,
  snapshot: Snapshot,
  view: { panX: number; panY: number; zoom: number },
  canvasWidth: number,
  canvasHeight: number,
): void {
  ctx.save();
  ctx.fillStyle = '#14161a';
  ctx.fillRect(0, 0, canvasWidth, canvasHeight);

  const model = buildMapModel(snapshot);
  if (!model) {
    ctx.restore();
    return;
  }
  const base = Math.min(canvasWidth / model.width, canvasHeight / model.height);
  const cellPx = base * view.zoom;
  ctx.translate(view.panX, view.panY);

  for (let r = 0; r < model.height; r++) {
    for (let c = 0; c < model.width; c++) {
      ctx.fillStyle = OCCUPANCY_COLORS[model.occupancy[r][c]] ?? '#000';
      ctx.fillRect(c * cellPx, r * cellPx, cellPx + 0.5, cellPx + 0.5);
    }
  }

  if (model.label) {
    for (let r = 0; r < model.height; r++) {
      for (let c = 0; c < model.width; c++) {
        const tid = model.label[r][c];
        if (tid === 0) continue;
        const row = model.registryById.get(tid);
        const style = labelStyle(row, row?.class ?? 0);
        if (style.struck) continue;
        ctx.fillStyle = style.fill;
        ctx.fillRect(c * cellPx, r * cellPx, cellPx + 0.5, cellPx + 0.5);
      }
    }
  }

  ctx.fillStyle = FRONTIER_COLOR;
  for (const [r, c] of model.frontier) {
    ctx.fillRect(c * cellPx, r * cellPx, cellPx + 0.5, cellPx + 0.5);
  }

  if (snapshot.user_cell) {
    const [r, c] = snapshot.user_cell;
    ctx.fillStyle = USER_COLOR;
    ctx.beginPath();
    ctx.arc((c + 0.5) * cellPx, (r + 0.5) * cellPx, Math.max(3, cellPx * 0.6), 0, Math.PI * 2);
    ctx.fill();
  }

  const plan = snapshot.plan;
  if (plan?.goal_cell) {
    const [r, c] = plan.goal_cell;
    ctx.strokeStyle = GOAL_COLOR;
    ctx.lineWidth = 2;
    ctx.strokeRect(c * cellPx - 2, r * cellPx - 2, cellPx + 4, cellPx + 4);
  }
  if (plan && plan.waypoints.length > 1) {
    const line = planPolyline(plan, cellPx);
    ctx.strokeStyle = ROUTE_COLOR;
    ctx.lineWidth = Math.max(1.5, cellPx * 0.25);
    ctx.beginPath();
    ctx.moveTo(line[0][0], line[0][1]);
    for (const [x, y] of line.slice(1)) ctx.lineTo(x, y);
    ctx.stroke();
  }
  ctx.restore();
}
