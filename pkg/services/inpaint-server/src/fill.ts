/** Pull-push pyramid hole filling.
 *
 * Pull: weighted 2x block averages of known pixels down to 1x1. Push:
 * walk back up, blending each level with the bilinear upsampling of the
 * coarser level by confidence weight. A 3x3 box blur smooths pyramid
 * blockiness inside the mask. Known pixels are returned untouched.
 */

interface Level {
  w: number;
  h: number;
  values: Float64Array; // RGB premultiplied-by-weight averages
  weights: Float64Array; // confidence in [0, 1]
}

function pull(level: Level): Level {
  const cw = Math.ceil(level.w / 2);
  const ch = Math.ceil(level.h / 2);
  const values = new Float64Array(cw * ch * 3);
  const weights = new Float64Array(cw * ch);
  for (let cy = 0; cy < ch; cy++) {
    for (let cx = 0; cx < cw; cx++) {
      let wsum = 0;
      const acc = [0, 0, 0];
      for (let dy = 0; dy < 2; dy++) {
        for (let dx = 0; dx < 2; dx++) {
          const y = cy * 2 + dy;
          const x = cx * 2 + dx;
          if (y >= level.h || x >= level.w) continue;
          const wgt = level.weights[y * level.w + x];
          wsum += wgt;
          const src = (y * level.w + x) * 3;
          acc[0] += level.values[src] * wgt;
          acc[1] += level.values[src + 1] * wgt;
          acc[2] += level.values[src + 2] * wgt;
        }
      }
      const dst = (cy * cw + cx) * 3;
      if (wsum > 0) {
        values[dst] = acc[0] / wsum;
        values[dst + 1] = acc[1] / wsum;
        values[dst + 2] = acc[2] / wsum;
      }
      weights[cy * cw + cx] = Math.min(wsum, 1);
    }
  }
  return { w: cw, h: ch, values, weights };
}

function bilinearUp(coarse: Level, w: number, h: number): Float64Array {
  const out = new Float64Array(w * h * 3);
  for (let y = 0; y < h; y++) {
    const fy = Math.min(Math.max((y - 0.5) / 2, 0), coarse.h - 1);
    const y0 = Math.floor(fy);
    const y1 = Math.min(y0 + 1, coarse.h - 1);
    const ty = fy - y0;
    for (let x = 0; x < w; x++) {
      const fx = Math.min(Math.max((x - 0.5) / 2, 0), coarse.w - 1);
      const x0 = Math.floor(fx);
      const x1 = Math.min(x0 + 1, coarse.w - 1);
      const tx = fx - x0;
      const dst = (y * w + x) * 3;
      for (let c = 0; c < 3; c++) {
        const tl = coarse.values[(y0 * coarse.w + x0) * 3 + c];
        const tr = coarse.values[(y0 * coarse.w + x1) * 3 + c];
        const bl = coarse.values[(y1 * coarse.w + x0) * 3 + c];
        const br = coarse.values[(y1 * coarse.w + x1) * 3 + c];
        out[dst + c] =
          (1 - ty) * ((1 - tx) * tl + tx * tr) +
          ty * ((1 - tx) * bl + tx * br);
      }
    }
  }
  return out;
}

export function pushPullFill(
  rgb: Uint8Array,
  mask: Uint8Array,
  width: number,
  height: number,
): Uint8Array {
  const n = width * height;
  let anyKnown = false;
  const base: Level = {
    w: width,
    h: height,
    values: new Float64Array(n * 3),
    weights: new Float64Array(n),
  };
  for (let i = 0; i < n; i++) {
    const known = mask[i] ? 0 : 1;
    if (known) anyKnown = true;
    base.weights[i] = known;
    base.values[i * 3] = (rgb[i * 3] / 255) * known;
    base.values[i * 3 + 1] = (rgb[i * 3 + 1] / 255) * known;
    base.values[i * 3 + 2] = (rgb[i * 3 + 2] / 255) * known;
  }
  if (!anyKnown) throw new Error("no known pixels to fill from");

  const levels: Level[] = [base];
  while (Math.max(levels[levels.length - 1].w, levels[levels.length - 1].h) > 1) {
    levels.push(pull(levels[levels.length - 1]));
  }
  let filled = levels[levels.length - 1].values;
  for (let li = levels.length - 2; li >= 0; li--) {
    const lvl = levels[li];
    const coarse = levels[li + 1];
    const up = bilinearUp(
      { ...coarse, values: filled },
      lvl.w,
      lvl.h,
    );
    const blended = new Float64Array(lvl.w * lvl.h * 3);
    for (let i = 0; i < lvl.w * lvl.h; i++) {
      const wgt = lvl.weights[i];
      for (let c = 0; c < 3; c++) {
        blended[i * 3 + c] =
          wgt * lvl.values[i * 3 + c] + (1 - wgt) * up[i * 3 + c];
      }
    }
    filled = blended;
  }

  // Composite: filled values inside the mask, originals outside, then a
  // 3x3 box blur restricted to masked pixels.
  const out = new Float64Array(n * 3);
  for (let i = 0; i < n; i++) {
    for (let c = 0; c < 3; c++) {
      out[i * 3 + c] = mask[i]
        ? Math.min(Math.max(filled[i * 3 + c], 0), 1)
        : rgb[i * 3 + c] / 255;
    }
  }
  const result = new Uint8Array(n * 3);
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = y * width + x;
      for (let c = 0; c < 3; c++) {
        let v: number;
        if (mask[i]) {
          let acc = 0;
          for (let dy = -1; dy <= 1; dy++) {
            for (let dx = -1; dx <= 1; dx++) {
              const yy = Math.min(Math.max(y + dy, 0), height - 1);
              const xx = Math.min(Math.max(x + dx, 0), width - 1);
              acc += out[(yy * width + xx) * 3 + c];
            }
          }
          v = acc / 9;
        } else {
          v = out[i * 3 + c];
        }
        result[i * 3 + c] = Math.min(Math.max(Math.round(v * 255), 0), 255);
      }
    }
  }
  return result;
}
