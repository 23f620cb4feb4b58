export const HIGHLIGHT: readonly [number, number, number] = [255, 64, 64];

/**
 * Turn a decoded grayscale mask (RGBA pixels, white = foreground) into a
 * highlight-colored overlay whose alpha channel is the mask itself. Painting
 * this over the tile with the canvas' globalAlpha gives the adjustable-
 * opacity view; it is pure presentation and touches no review state.
 */
export function tintMask(pixels: Uint8ClampedArray,
                         color: readonly [number, number, number] = HIGHLIGHT): Uint8ClampedArray {
  const out = new Uint8ClampedArray(pixels.length);
  for (let i = 0; i < pixels.length; i += 4) {
    const on = pixels[i] > 127;
    out[i] = color[0];
    out[i + 1] = color[1];
    out[i + 2] = color[2];
    out[i + 3] = on ? 255 : 0;
  }
  return out;
}
