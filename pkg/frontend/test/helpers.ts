import { encodeRaster } from '../src/rle';
import type { Plan, RegistryRow, Snapshot } from '../src/types';

export function makeSnapshot(overrides: Partial<Snapshot> = {}): Snapshot {
  const occupancy = [
    [2, 2, 2, 2, 2],
    [2, 0, 0, 0, 2],
    [2, 0, 1, 0, 2],
    [2, 0, 0, 0, 2],
    [2, 2, 2, 2, 2],
  ];
  const label = [
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
    [0, 0, 7, 0, 0],
    [0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0],
  ];
  const registry: RegistryRow[] = [
    { id: 7, class: 9, state: 'Recent', confidence: 1.0, last_seen: 12 },
  ];
  const plan: Plan = {
    status: 'Planned',
    goal_cell: [1, 3],
    goal_tracklet: 7,
    waypoints: [
      [1, 1],
      [1, 2],
      [1, 3],
    ],
  };
  return {
    status: 'running',
    block: 1,
    frame: 19,
    trajectory_tail: [],
    plane: { normal: [0, 0, 1], offset: 0 },
    rasters: {
      occupancy: encodeRaster(occupancy, [0, 0], 0.05),
      label: encodeRaster(label, [0, 0], 0.05),
    },
    registry,
    plan,
    user_cell: [1, 1],
    target_class: null,
    ...overrides,
  };
}
