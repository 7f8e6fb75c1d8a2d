import type { Snapshot } from './types';

export interface PanelRow {
  id: number;
  cls: number;
  state: string;
  confidence: string;
  lastSeen: number;
  dimmed: boolean;
  struck: boolean;
  selectable: boolean;
}

/** Registry side-panel rows; Removed objects are struck and not clickable. */
export function panelRows(snapshot: Snapshot | null): PanelRow[] {
  if (!snapshot) return [];
  return snapshot.registry.map((row) => ({
    id: row.id,
    cls: row.class,
    state: row.state,
    confidence: row.confidence.toFixed(2),
    lastSeen: row.last_seen,
    dimmed: row.state === 'Retained',
    struck: row.state === 'Removed',
    selectable: row.state !== 'Removed',
  }));
}

/** Distinct goal classes the operator can select, Removed-only classes excluded. */
export function selectableClasses(snapshot: Snapshot | null): number[] {
  const classes = new Set<number>();
  for (const row of snapshot?.registry ?? []) {
    if (row.state !== 'Removed') classes.add(row.class);
  }
  return [...classes].sort((a, b) => a - b);
}
