import { ServiceClient } from './api';
import { panelRows, selectableClasses } from './panel';
import { legendEntries, renderMap } from './render';
import { initialState, reduce, type Action, type ViewState } from './state';
import type { Snapshot } from './types';

const params = new URLSearchParams(window.location.search);
const base = params.get('service') ?? '';
const client = new ServiceClient(base);

let state: ViewState = initialState();

const canvas = document.getElementById('map') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const statusEl = document.getElementById('status')!;
const blockEl = document.getElementById('block')!;
const errorEl = document.getElementById('error')!;
const legendEl = document.getElementById('legend')!;
const registryEl = document.getElementById('registry')!;
const goalsEl = document.getElementById('goals')!;
const planEl = document.getElementById('plan')!;

function dispatch(action: Action): void {
  state = reduce(state, action);
  draw();
}

function classButton(cls: number): HTMLButtonElement {
  const btn = document.createElement('button');
  btn.textContent = `find class ${cls}`;
  btn.disabled = state.connection !== 'connected';
  if (state.selectedClass === cls) btn.classList.add('active');
  btn.onclick = () => {
    dispatch({ kind: 'select-goal', cls });
    client.setGoal(cls).catch((err) => dispatch({ kind: 'command-rejected', message: `${err}` }));
  };
  return btn;
}

function draw(): void {
  statusEl.textContent = `${state.connection} | ${state.snapshot?.status ?? 'no data'}`;
  statusEl.className = state.connection;
  blockEl.textContent = state.snapshot ? `block ${state.snapshot.block}` : 'block –';
  errorEl.textContent = state.error ?? '';
  errorEl.style.display = state.error ? 'block' : 'none';

  if (state.snapshot) {
    try {
      renderMap(ctx, state.snapshot, state.viewport, canvas.width, canvas.height);
    } catch (err) {
      // Malformed snapshot: keep the previous frame, surface the banner.
      dispatchSoon({ kind: 'snapshot-error', message: `${err}` });
    }
  }

  legendEl.replaceChildren(
    ...legendEntries(state.snapshot).map((entry) => {
      const li = document.createElement('li');
      const swatch = document.createElement('span');
      swatch.className = 'swatch';
      swatch.style.background = entry.color;
      li.append(swatch, entry.label);
      return li;
    }),
  );

  registryEl.replaceChildren(
    ...panelRows(state.snapshot).map((row) => {
      const tr = document.createElement('tr');
      if (row.struck) tr.classList.add('struck');
      if (row.dimmed) tr.classList.add('dimmed');
      for (const cell of [row.id, row.cls, row.state, row.confidence, row.lastSeen]) {
        const td = document.createElement('td');
        td.textContent = `${cell}`;
        tr.append(td);
      }
      return tr;
    }),
  );

  const buttons = selectableClasses(state.snapshot).map(classButton);
  const clear = document.createElement('button');
  clear.textContent = 'clear goal';
  clear.disabled = state.connection !== 'connected';
  clear.onclick = () => {
    dispatch({ kind: 'clear-goal' });
    client.clearGoal().catch((err) => dispatch({ kind: 'command-rejected', message: `${err}` }));
  };
  goalsEl.replaceChildren(...buttons, clear);
  if (state.goalPending) goalsEl.classList.add('pending');
  else goalsEl.classList.remove('pending');

  const plan = state.snapshot?.plan;
  planEl.textContent = plan
    ? `${plan.status}${plan.goal_tracklet != null ? ` -> object ${plan.goal_tracklet}` : ''} (${plan.waypoints.length} waypoints)`
    : 'no plan';
}

let queued: Action | null = null;
function dispatchSoon(action: Action): void {
  // Avoid recursive dispatch from inside draw().
  if (queued) return;
  queued = action;
  setTimeout(() => {
    const a = queued!;
    queued = null;
    dispatch(a);
  }, 0);
}

for (const [id, action] of [
  ['btn-pause', 'pause'],
  ['btn-resume', 'resume'],
  ['btn-step', 'step'],
] as const) {
  document.getElementById(id)!.onclick = () => {
    dispatch({ kind: 'playback', mode: action === 'resume' ? 'running' : 'paused' });
    client.playback(action).catch((err) => dispatch({ kind: 'command-rejected', message: `${err}` }));
  };
}

canvas.addEventListener('wheel', (ev) => {
  ev.preventDefault();
  dispatch({ kind: 'zoom', factor: ev.deltaY < 0 ? 1.2 : 1 / 1.2 });
});
let dragging: [number, number] | null = null;
canvas.addEventListener('mousedown', (ev) => (dragging = [ev.clientX, ev.clientY]));
window.addEventListener('mouseup', () => (dragging = null));
window.addEventListener('mousemove', (ev) => {
  if (!dragging) return;
  dispatch({ kind: 'pan', dx: ev.clientX - dragging[0], dy: ev.clientY - dragging[1] });
  dragging = [ev.clientX, ev.clientY];
});

client
  .getState()
  .then((snap: Snapshot) => dispatch({ kind: 'snapshot', snapshot: snap }))
  .catch(() => undefined);

client.subscribe(
  (snap) => dispatch({ kind: 'snapshot', snapshot: snap }),
  (message) => {
    if (message === 'stream error') dispatch({ kind: 'disconnected' });
    else dispatch({ kind: 'snapshot-error', message });
  },
  () => dispatch({ kind: 'connected' }),
);

draw();
