import type { Snapshot } from './types';

export type Connection = 'connecting' | 'connected' | 'disconnected';
export type PlaybackMode = 'running' | 'paused';

export interface Viewport {
  panX: number;
  panY: number;
  zoom: number;
}

export interface ViewState {
  connection: Connection;
  snapshot: Snapshot | null;
  /** Goal class the operator wants; mirrors the service once confirmed. */
  selectedClass: number | null;
  /** True while a goal command is awaiting a confirming snapshot. */
  goalPending: boolean;
  playback: PlaybackMode;
  viewport: Viewport;
  error: string | null;
}

export type Action =
  | { kind: 'connected' }
  | { kind: 'disconnected' }
  | { kind: 'snapshot'; snapshot: Snapshot }
  | { kind: 'snapshot-error'; message: string }
  | { kind: 'select-goal'; cls: number }
  | { kind: 'clear-goal' }
  | { kind: 'command-rejected'; message: string }
  | { kind: 'playback'; mode: PlaybackMode }
  | { kind: 'pan'; dx: number; dy: number }
  | { kind: 'zoom'; factor: number };

export function initialState(): ViewState {
  return {
    connection: 'connecting',
    snapshot: null,
    selectedClass: null,
    goalPending: false,
    playback: 'running',
    viewport: { panX: 0, panY: 0, zoom: 1 },
    error: null,
  };
}

/** Pure reducer: the whole UI is a function of (snapshot, ViewState). */
export function reduce(state: ViewState, action: Action): ViewState {
  switch (action.kind) {
    case 'connected':
      return { ...state, connection: 'connected', error: null };
    case 'disconnected':
      return { ...state, connection: 'disconnected' };
    case 'snapshot': {
      const confirmed = action.snapshot.target_class === state.selectedClass;
      return {
        ...state,
        snapshot: action.snapshot,
        goalPending: state.goalPending && !confirmed,
        error: null,
      };
    }
    case 'snapshot-error':
      // Keep the previous frame on malformed input; only surface the banner.
      return { ...state, error: action.message };
    case 'select-goal':
      return { ...state, selectedClass: action.cls, goalPending: true };
    case 'clear-goal':
      return { ...state, selectedClass: null, goalPending: true };
    case 'command-rejected':
      return {
        ...state,
        selectedClass: state.snapshot?.target_class ?? null,
        goalPending: false,
        error: action.message,
      };
    case 'playback':
      return { ...state, playback: action.mode };
    case 'pan':
      return {
        ...state,
        viewport: {
          ...state.viewport,
          panX: state.viewport.panX + action.dx,
          panY: state.viewport.panY + action.dy,
        },
      };
    case 'zoom': {
      const zoom = Math.min(16, Math.max(0.25, state.viewport.zoom * action.factor));
      return { ...state, viewport: { ...state.viewport, zoom } };
    }
  }
}
