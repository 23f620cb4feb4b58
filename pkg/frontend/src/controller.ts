import { ApiError, Decision, QueueItem, ReviewApiSurface, ServiceStatus } from './api.js';

export type Phase = 'loading' | 'reviewing' | 'empty' | 'disconnected';

export interface Counters {
  pending: number;
  accepted: number;
  rejected: number;
}

export interface ViewState {
  phase: Phase;
  item: QueueItem | null;
  counters: Counters;
  round: number;
  training: boolean;
  overlayOn: boolean;
  overlayOpacity: number;
  toast: string | null;
}

const ZERO: Counters = { pending: 0, accepted: 0, rejected: 0 };

/**
 * Client-side state machine for the review loop.
 *
 * Counters shown in the view are always verbatim from the last /api/status
 * response; the controller never increments them locally. A decision that
 * fails on the network is retained and retried, and a 409 (someone already
 * decided) is treated as informational: the reviewer just moves on.
 */
export class ReviewController {
  private state: ViewState = {
    phase: 'loading',
    item: null,
    counters: { ...ZERO },
    round: 0,
    training: false,
    overlayOn: true,
    overlayOpacity: 0.4,
    toast: null
  };

  private decisionInFlight = false;
  private retained: { id: string; decision: Decision } | null = null;
  private trainingRequested = false;

  constructor(
    private readonly api: ReviewApiSurface,
    private readonly onChange: (state: ViewState) => void = () => {}
  ) {}

  snapshot(): ViewState {
    return { ...this.state, counters: { ...this.state.counters } };
  }

  private emit(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    this.onChange(this.snapshot());
  }

  async start(): Promise<void> {
    await this.refreshStatus();
    await this.fetchNext();
  }

  async refreshStatus(): Promise<ServiceStatus | null> {
    try {
      const status = await this.api.status();
      this.emit({
        counters: {
          pending: status.pending,
          accepted: status.accepted,
          rejected: status.rejected
        },
        round: status.round,
        training: status.training
      });
      return status;
    } catch {
      this.emit({ phase: 'disconnected' });
      return null;
    }
  }

  async fetchNext(): Promise<void> {
    this.emit({ phase: 'loading', item: null });
    try {
      const next = await this.api.nextItem();
      if ('empty' in next) {
        this.emit({ phase: 'empty', item: null });
      } else {
        this.emit({ phase: 'reviewing', item: next, overlayOn: true });
      }
    } catch {
      this.emit({ phase: 'disconnected' });
    }
  }

  /** Retry entry point for the disconnected banner; no state is lost. */
  async retry(): Promise<void> {
    if (this.retained) {
      const { id, decision } = this.retained;
      this.retained = null;
      await this.submit(id, decision);
      return;
    }
    await this.refreshStatus();
    await this.fetchNext();
  }

  async decide(decision: Decision): Promise<void> {
    if (this.state.phase !== 'reviewing' || !this.state.item || this.decisionInFlight) {
      return;
    }
    await this.submit(this.state.item.id, decision);
  }

  private async submit(id: string, decision: Decision): Promise<void> {
    this.decisionInFlight = true;
    try {
      await this.api.submitDecision(id, decision);
      this.emit({ toast: null });
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.emit({ toast: `item ${id} was already decided` });
      } else if (err instanceof ApiError) {
        this.emit({ toast: `decision rejected: ${err.message}` });
      } else {
        // network failure: retain the decision and surface the retry banner
        this.retained = { id, decision };
        this.decisionInFlight = false;
        this.emit({ phase: 'disconnected' });
        return;
      }
    } finally {
      this.decisionInFlight = false;
    }
    await this.refreshStatus();
    await this.fetchNext();
  }

  toggleOverlay(): void {
    this.emit({ overlayOn: !this.state.overlayOn });
  }

  setOverlayOpacity(value: number): void {
    this.emit({ overlayOpacity: Math.min(1, Math.max(0, value)) });
  }

  /**
   * Kick off the next training round and poll until the round counter
   * advances. A 409 means a run is already going: just keep polling.
   */
  async startTraining(pollMs = 500, maxPolls = 2400): Promise<boolean> {
    if (this.trainingRequested) {
      return false;
    }
    this.trainingRequested = true;
    const startRound = this.state.round;
    try {
      try {
        await this.api.startTraining();
      } catch (err) {
        if (!(err instanceof ApiError && err.status === 409)) {
          this.emit({ toast: 'could not start training' });
          return false;
        }
        this.emit({ toast: 'training already running' });
      }
      this.emit({ training: true });
      for (let i = 0; i < maxPolls; i++) {
        await sleep(pollMs);
        const status = await this.refreshStatus();
        if (status && status.round > startRound && !status.training) {
          await this.fetchNext();
          return true;
        }
      }
      return false;
    } finally {
      this.trainingRequested = false;
    }
  }

  async handleKey(key: string): Promise<void> {
    switch (key.toLowerCase()) {
      case 'a':
        await this.decide('accept');
        break;
      case 'r':
        await this.decide('reject');
        break;
      case 'o':
        this.toggleOverlay();
        break;
    }
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
