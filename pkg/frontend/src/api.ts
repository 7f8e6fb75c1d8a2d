import type { Snapshot } from './types';

export interface EventSourceLike {
  onmessage: ((ev: { data: string }) => void) | null;
  onerror: ((ev: unknown) => void) | null;
  onopen: ((ev: unknown) => void) | null;
  close(): void;
}

export interface ClientDeps {
  fetchFn?: typeof fetch;
  eventSourceFactory?: (url: string) => EventSourceLike;
}

/** Thin wrapper over the engine service HTTP API. All mutations go here. */
export class ServiceClient {
  private fetchFn: typeof fetch;
  private esFactory: (url: string) => EventSourceLike;

  constructor(private base: string = '', deps: ClientDeps = {}) {
    this.fetchFn = deps.fetchFn ?? fetch.bind(globalThis);
    this.esFactory =
      deps.eventSourceFactory ?? ((url: string) => new EventSource(url) as EventSourceLike);
  }

  private async request(path: string, init?: RequestInit): Promise<unknown> {
    const resp = await this.fetchFn(`${this.base}${path}`, init);
    if (!resp.ok) {
      let reason = `${resp.status}`;
      try {
        const body = (await resp.json()) as { error?: string };
        if (body.error) reason = body.error;
      } catch {
        // keep the status code
      }
      throw new Error(reason);
    }
    return resp.json();
  }

  getState(): Promise<Snapshot> {
    return this.request('/state') as Promise<Snapshot>;
  }

  async setGoal(cls: number): Promise<void> {
    await this.request('/goal', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ class: cls }),
    });
  }

  async clearGoal(): Promise<void> {
    await this.request('/goal', { method: 'DELETE' });
  }

  async playback(action: 'pause' | 'resume' | 'step' | 'speed', speed = 1.0): Promise<void> {
    await this.request('/playback', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ action, speed }),
    });
  }

  /**
   * Subscribe to the per-block snapshot stream. Returns an unsubscribe
   * function. Malformed payloads surface through onError without dropping
   * the subscription.
   */
  subscribe(
    onSnapshot: (snap: Snapshot) => void,
    onError: (message: string) => void,
    onOpen?: () => void,
  ): () => void {
    const es = this.esFactory(`${this.base}/events`);
    es.onopen = () => onOpen?.();
    es.onmessage = (ev) => {
      try {
        onSnapshot(JSON.parse(ev.data) as Snapshot);
      } catch (err) {
        onError(`malformed snapshot: ${err}`);
      }
    };
    es.onerror = () => onError('stream error');
    return () => es.close();
  }
}
