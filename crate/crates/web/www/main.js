import init, { schedule_curves, noise_sine, multinomial_probs } from "./pkg/seqdiff_web.js";

const T = 1000;
const $ = (id) => document.getElementById(id);

function clear(canvas) {
  const ctx = canvas.getContext("2d");
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  return ctx;
}

function line(ctx, ys, lo, hi, color, dots = false) {
  const { width: w, height: h } = ctx.canvas;
  const pad = 10;
  const x = (i) => pad + (i / Math.max(1, ys.length - 1)) * (w - 2 * pad);
  const y = (v) => h - pad - ((v - lo) / (hi - lo)) * (h - 2 * pad);
  ctx.strokeStyle = ctx.fillStyle = color;
  ctx.beginPath();
  ys.forEach((v, i) => (i ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v))));
  ctx.stroke();
  if (dots) ys.forEach((v, i) => ctx.fillRect(x(i) - 2, y(v) - 2, 4, 4));
}

function drawSchedule() {
  const steps = Number($("sched-T").value);
  const ctx = clear($("sched"));
  try {
    const c = schedule_curves(steps);
    const n = c.length / 3;
    line(ctx, c.subarray(0, n), 0, 1, "#1f77b4");
    line(ctx, c.subarray(n, 2 * n), 0, 1, "#d62728");
    line(ctx, c.subarray(2 * n), 0, 1, "#2ca02c");
    $("sched-msg").textContent = `ᾱ(T) = ${c[n - 1].toExponential(3)}, β clipped at 0.999`;
    $("sched-msg").className = "";
  } catch (e) {
    $("sched-msg").textContent = e.message ?? String(e);
    $("sched-msg").className = "err";
  }
}

function drawSine() {
  const t = Number($("sine-t").value);
  $("sine-t-val").textContent = t;
  const v = noise_sine(T, t, 96, BigInt($("sine-seed").value || 0));
  const n = v.length / 2;
  const ctx = clear($("sine"));
  line(ctx, v.subarray(0, n), -3, 4, "#999");
  line(ctx, v.subarray(n), -3, 4, "#1f77b4", true);
}

function bars(ctx, a, b) {
  const { width: w, height: h } = ctx.canvas;
  const slot = w / a.length;
  a.forEach((p, i) => {
    ctx.fillStyle = "#1f77b4";
    ctx.fillRect(i * slot + 8, h - p * (h - 20), slot / 2 - 10, p * (h - 20));
    ctx.fillStyle = "#ff7f0e";
    ctx.fillRect(i * slot + slot / 2, h - b[i] * (h - 20), slot / 2 - 10, b[i] * (h - 20));
    ctx.fillStyle = "#222";
    ctx.fillText(String(i), i * slot + slot / 2 - 3, 12);
  });
}

function drawCategories() {
  const t = Number($("cat-t").value);
  $("cat-t-val").textContent = t;
  const ctx = clear($("cat"));
  try {
    const k = Number($("cat-k").value);
    const p = multinomial_probs(T, t, k, Number($("cat-c0").value), Number($("cat-ct").value));
    bars(ctx, p.subarray(0, k), p.subarray(k));
    $("cat-msg").textContent = "";
  } catch (e) {
    $("cat-msg").textContent = e.message ?? String(e);
    $("cat-msg").className = "err";
  }
}

await init();
$("sched-T").addEventListener("input", drawSchedule);
for (const id of ["sine-t", "sine-seed"]) $(id).addEventListener("input", drawSine);
for (const id of ["cat-k", "cat-c0", "cat-ct", "cat-t"]) $(id).addEventListener("input", drawCategories);
drawSchedule();
drawSine();
drawCategories();
