import { ReviewApi } from './api.js';
import { ReviewController, ViewState } from './controller.js';
import { tintMask } from './overlay.js';
import { actionForKey } from './shortcuts.js';

const api = new ReviewApi('');

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>('view');
const ctx = canvas.getContext('2d')!;
const counters = {
  pending: el<HTMLSpanElement>('count-pending'),
  accepted: el<HTMLSpanElement>('count-accepted'),
  rejected: el<HTMLSpanElement>('count-rejected')
};
const roundEl = el<HTMLSpanElement>('round');
const itemEl = el<HTMLSpanElement>('item-id');
const toastEl = el<HTMLDivElement>('toast');
const emptyEl = el<HTMLDivElement>('empty-state');
const reviewEl = el<HTMLDivElement>('review-state');
const disconnectedEl = el<HTMLDivElement>('disconnected-state');
const opacitySlider = el<HTMLInputElement>('opacity');
const trainBtn = el<HTMLButtonElement>('train');

let tileImage: HTMLImageElement | null = null;
let maskTint: ImageData | null = null;
let shownItemId: string | null = null;

async function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

async function loadItemPixels(id: string): Promise<void> {
  // image and mask always come from the same item id
  const [tile, mask] = await Promise.all([
    loadImage(api.imageUrl(id)),
    loadImage(api.maskUrl(id))
  ]);
  canvas.width = tile.width;
  canvas.height = tile.height;
  const scratch = document.createElement('canvas');
  scratch.width = mask.width;
  scratch.height = mask.height;
  const sctx = scratch.getContext('2d')!;
  sctx.drawImage(mask, 0, 0);
  const raw = sctx.getImageData(0, 0, mask.width, mask.height);
  const tinted = sctx.createImageData(mask.width, mask.height);
  tinted.data.set(tintMask(raw.data));
  maskTint = tinted;
  tileImage = tile;
  shownItemId = id;
}

function draw(state: ViewState): void {
  if (!tileImage) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.drawImage(tileImage, 0, 0);
  if (state.overlayOn && maskTint) {
    const scratch = document.createElement('canvas');
    scratch.width = maskTint.width;
    scratch.height = maskTint.height;
    scratch.getContext('2d')!.putImageData(maskTint, 0, 0);
    ctx.globalAlpha = state.overlayOpacity;
    ctx.drawImage(scratch, 0, 0);
    ctx.globalAlpha = 1.0;
  }
}

async function render(state: ViewState): Promise<void> {
  counters.pending.textContent = String(state.counters.pending);
  counters.accepted.textContent = String(state.counters.accepted);
  counters.rejected.textContent = String(state.counters.rejected);
  roundEl.textContent = String(state.round);
  toastEl.textContent = state.toast ?? '';
  toastEl.style.display = state.toast ? 'block' : 'none';
  emptyEl.style.display = state.phase === 'empty' ? 'block' : 'none';
  reviewEl.style.display = state.phase === 'reviewing' ? 'block' : 'none';
  disconnectedEl.style.display = state.phase === 'disconnected' ? 'block' : 'none';
  trainBtn.disabled = state.training;
  trainBtn.textContent = state.training ? 'training…' : 'start training';
  if (state.phase === 'reviewing' && state.item) {
    itemEl.textContent = state.item.id;
    if (state.item.id !== shownItemId) {
      await loadItemPixels(state.item.id);
    }
    draw(state);
  }
}

const controller = new ReviewController(api, (state) => {
  void render(state);
});

el<HTMLButtonElement>('accept').addEventListener('click', () => void controller.decide('accept'));
el<HTMLButtonElement>('reject').addEventListener('click', () => void controller.decide('reject'));
el<HTMLButtonElement>('overlay-toggle').addEventListener('click', () => controller.toggleOverlay());
el<HTMLButtonElement>('retry').addEventListener('click', () => void controller.retry());
trainBtn.addEventListener('click', () => void controller.startTraining());
opacitySlider.addEventListener('input', () => {
  controller.setOverlayOpacity(Number(opacitySlider.value) / 100);
});

document.addEventListener('keydown', (ev) => {
  if (ev.target instanceof HTMLInputElement) return;
  if (actionForKey(ev.key)) {
    void controller.handleKey(ev.key);
  }
});

void controller.start();
