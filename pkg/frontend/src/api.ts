export interface QueueItem {
  id: string;
  status: string;
  round: number;
}

export interface QueueEmpty {
  empty: true;
}

export interface ServiceStatus {
  pending: number;
  accepted: number;
  rejected: number;
  round: number;
  training: boolean;
}

export type Decision = 'accept' | 'reject';

export class ApiError extends Error {
  constructor(public readonly status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** The subset of the HTTP interface the controller needs; mocked in tests. */
export interface ReviewApiSurface {
  nextItem(): Promise<QueueItem | QueueEmpty>;
  status(): Promise<ServiceStatus>;
  submitDecision(id: string, decision: Decision): Promise<{ id: string; status: string }>;
  startTraining(): Promise<{ status: string; round: number }>;
}

/** Thin typed wrapper over the review service's HTTP interface. */
export class ReviewApi implements ReviewApiSurface {
  constructor(
    private readonly base: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init)
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    const body = await resp.json();
    if (!resp.ok) {
      throw new ApiError(resp.status, body?.error ?? `HTTP ${resp.status}`);
    }
    return body as T;
  }

  nextItem(): Promise<QueueItem | QueueEmpty> {
    return this.json<QueueItem | QueueEmpty>('/api/queue/next');
  }

  status(): Promise<ServiceStatus> {
    return this.json<ServiceStatus>('/api/status');
  }

  submitDecision(id: string, decision: Decision): Promise<{ id: string; status: string }> {
    return this.json(`/api/items/${encodeURIComponent(id)}/decision`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ decision })
    });
  }

  startTraining(): Promise<{ status: string; round: number }> {
    return this.json('/api/train', { method: 'POST' });
  }

  imageUrl(id: string): string {
    return `${this.base}/api/items/${encodeURIComponent(id)}/image`;
  }

  maskUrl(id: string): string {
    return `${this.base}/api/items/${encodeURIComponent(id)}/mask`;
  }
}
