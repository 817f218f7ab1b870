import init, { simulate, control, cgo } from './pkg/waveinv_wasm.js';

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plotLine(canvas, xs, ys, { lo, hi, color = '#1565c0' } = {}) {
  const ctx = canvas.getContext('2d');
  const { width: w, height: h } = canvas;
  if (lo === undefined) lo = Math.min(...ys);
  if (hi === undefined) hi = Math.max(...ys);
  if (hi - lo < 1e-12) { hi += 1; lo -= 1; }
  const x0 = xs[0], x1 = xs[xs.length - 1];
  ctx.strokeStyle = color;
  ctx.beginPath();
  xs.forEach((x, i) => {
    const px = ((x - x0) / (x1 - x0)) * (w - 20) + 10;
    const py = h - 10 - ((ys[i] - lo) / (hi - lo)) * (h - 20);
    i ? ctx.lineTo(px, py) : ctx.moveTo(px, py);
  });
  ctx.stroke();
}

function clear(canvas) {
  canvas.getContext('2d').clearRect(0, 0, canvas.width, canvas.height);
}

let timers = {};

function animate(key, frames, canvas, energyCanvas) {
  cancelAnimationFrame(timers[key]);
  const x = Array.from(frames.x());
  const values = frames.values();
  const times = Array.from(frames.times());
  const energy = Array.from(frames.energy());
  const n = x.length;
  const amp = Math.max(1e-9, ...Array.from(values, Math.abs));
  let k = 0;
  const step = () => {
    clear(canvas);
    plotLine(canvas, x, Array.from(values.subarray(k * n, (k + 1) * n)), { lo: -amp, hi: amp });
    const ctx = canvas.getContext('2d');
    ctx.fillStyle = '#444';
    ctx.fillText(`t = ${times[k].toFixed(3)}`, 14, 16);
    clear(energyCanvas);
    plotLine(energyCanvas, times, energy, { lo: 0, color: '#999' });
    plotLine(energyCanvas, times.slice(0, k + 1), energy.slice(0, k + 1), { lo: 0, hi: Math.max(...energy), color: '#c62828' });
    k = (k + 1) % times.length;
    timers[key] = requestAnimationFrame(() => setTimeout(step, 30));
  };
  step();
}

function guarded(noteId, fn) {
  const note = $(noteId);
  note.className = 'note';
  note.textContent = 'computing...';
  setTimeout(() => {
    try {
      fn(note);
    } catch (e) {
      note.className = 'note err';
      note.textContent = String(e.message || e);
    }
  }, 10);
}

function runSim() {
  guarded('sim-note', (note) => {
    const f = simulate(200, num('sim-t'), num('sim-c'), num('sim-a'), num('sim-k'));
    note.textContent = f.note() + '; grey curve: energy u_t^2 + u_x^2 (the u^4 part is not shown)';
    animate('sim', f, $('sim-canvas'), $('sim-energy'));
  });
}

function runCtl() {
  guarded('ctl-note', (note) => {
    const f = control(100, num('ctl-t'), $('ctl-both').checked);
    note.textContent = f.note();
    animate('ctl', f, $('ctl-canvas'), $('ctl-energy'));
  });
}

function runCgo() {
  guarded('cgo-note', (note) => {
    const img = cgo(num('cgo-tau'), num('cgo-n'), num('cgo-q'));
    const n = img.n();
    const re = img.re();
    const m = Math.max(1e-12, ...Array.from(re, Math.abs));
    const canvas = $('cgo-canvas');
    const ctx = canvas.getContext('2d');
    const data = ctx.createImageData(n, n);
    for (let j = 0; j < n; j++) {
      for (let i = 0; i < n; i++) {
        const v = re[j * n + i] / m;
        const p = 4 * ((n - 1 - j) * n + i);
        data.data[p] = v > 0 ? 255 : 255 * (1 + v);
        data.data[p + 1] = 255 * (1 - Math.abs(v));
        data.data[p + 2] = v < 0 ? 255 : 255 * (1 - v);
        data.data[p + 3] = 255;
      }
    }
    const tmp = document.createElement('canvas');
    tmp.width = tmp.height = n;
    tmp.getContext('2d').putImageData(data, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);
    note.textContent = `remainder L2 norm ${img.remainder_l2().toExponential(3)}`;
  });
}

await init();
$('sim-run').onclick = runSim;
$('ctl-run').onclick = runCtl;
$('cgo-run').onclick = runCgo;
runSim();
runCtl();
runCgo();
