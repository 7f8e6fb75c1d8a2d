// Wire types mirroring the engine service's snapshot JSON.

export type RlePair = [number, number]; // [value, run length]

export interface RasterRle {
  width: number;
  height: number;
  origin: [number, number];
  cell: number;
  rows: RlePair[][];
}

export type ObjectStateName = 'Recent' | 'Removed' | 'Retained';

export interface RegistryRow {
  id: number;
  class: number;
  state: ObjectStateName;
  confidence: number;
  last_seen: number;
}

export interface Plan {
  status: 'Reached' | 'Planned' | 'Exploring' | 'NoGoal';
  goal_cell: [number, number] | null;
  goal_tracklet: number | null;
  waypoints: [number, number][];
}

export interface Snapshot {
  status: 'warming' | 'running' | 'done';
  block: number;
  frame: number;
  trajectory_tail: [number, number[]][];
  plane: { normal: number[]; offset: number } | null;
  rasters: { occupancy?: RasterRle; label?: RasterRle };
  registry: RegistryRow[];
  plan: Plan | null;
  user_cell: [number, number] | null;
  target_class: number | null;
}

export const OCC_FREE = 0;
export const OCC_OBSTACLE = 1;
export const OCC_UNKNOWN = 2;
