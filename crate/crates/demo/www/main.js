import init, { pinball_curve, sample_quantile, unit_hydrograph, QuantileDemo } from "./pkg/qhydro_demo.js";

const $ = (id) => document.getElementById(id);

function axes(ctx, w, h, pad) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#888";
  ctx.lineWidth = 1;
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
}

// Draws series (arrays of y, evenly spaced in x) on a shared scale.
function plotLines(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  axes(ctx, w, h, pad);
  const finite = series.flatMap((s) => Array.from(s.y).filter(Number.isFinite));
  const ymax = opts.ymax ?? Math.max(...finite) * 1.05;
  const ymin = opts.ymin ?? 0;
  const n = Math.max(...series.map((s) => s.y.length));
  const x = (i) => pad + (i / Math.max(n - 1, 1)) * (w - 1.5 * pad);
  const y = (v) => h - pad - ((v - ymin) / (ymax - ymin || 1)) * (h - 1.5 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "12px sans-serif";
  ctx.fillText(ymax.toPrecision(3), 2, pad / 2 + 10);
  ctx.fillText(ymin.toPrecision(3), 2, h - pad);
  if (opts.xlabels) {
    ctx.fillText(opts.xlabels[0], pad, h - pad + 16);
    ctx.fillText(opts.xlabels[1], w - pad * 2, h - pad + 16);
  }
  for (const s of series) {
    ctx.strokeStyle = s.color;
    ctx.fillStyle = s.color;
    ctx.lineWidth = s.width ?? 1.5;
    if (s.bars) {
      const bw = (w - 1.5 * pad) / n * 0.8;
      s.y.forEach((v, i) => ctx.fillRect(x(i) - bw / 2, y(v), bw, y(ymin) - y(v)));
      continue;
    }
    if (s.dots) {
      s.y.forEach((v, i) => { if (Number.isFinite(v)) ctx.fillRect(x(i) - 1, y(v) - 1, 2.5, 2.5); });
      continue;
    }
    ctx.beginPath();
    let pen = false;
    s.y.forEach((v, i) => {
      if (!Number.isFinite(v)) { pen = false; return; }
      pen ? ctx.lineTo(x(i), y(v)) : ctx.moveTo(x(i), y(v));
      pen = true;
    });
    ctx.stroke();
  }
  if (opts.marker !== undefined) {
    ctx.strokeStyle = "#2ca02c";
    ctx.setLineDash([4, 4]);
    ctx.beginPath();
    ctx.moveTo(x(opts.marker), pad / 2);
    ctx.lineTo(x(opts.marker), h - pad);
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

// Pinball loss: fixed log-normal-looking sample.
const sample = Array.from({ length: 200 }, (_, i) => {
  const u = (i + 0.5) / 200;
  return Math.exp(1.2 * Math.sqrt(2) * erfinv(2 * u - 1));
});
function erfinv(x) {
  const a = 0.147, l = Math.log(1 - x * x), t = 2 / (Math.PI * a) + l / 2;
  return Math.sign(x) * Math.sqrt(Math.sqrt(t * t - l / a) - t);
}
const R_MAX = 12, N_GRID = 241;

function drawPinball() {
  const level = parseFloat($("pb-level").value);
  $("pb-level-out").textContent = level.toFixed(2);
  const curve = pinball_curve(level, Float64Array.from(sample), 0, R_MAX, N_GRID);
  const q = sample_quantile(level, Float64Array.from(sample));
  $("pb-q").textContent = q.toFixed(3);
  plotLines($("pb-canvas"), [{ y: curve, color: "#1f77b4" }], {
    marker: (q / R_MAX) * (N_GRID - 1),
    xlabels: ["r = 0", `r = ${R_MAX}`],
  });
}

function drawUh() {
  const x4 = parseFloat($("uh-x4").value);
  $("uh-x4-out").textContent = x4.toFixed(1);
  const uh1 = unit_hydrograph(x4, 1);
  const uh2 = unit_hydrograph(x4, 2);
  const pad = (a) => Array.from({ length: uh2.length }, (_, i) => (i < a.length ? a[i] : NaN));
  plotLines($("uh-canvas"), [
    { y: pad(uh1), color: "#1f77b4", dots: true },
    { y: pad(uh1), color: "#1f77b4" },
    { y: uh2, color: "#d62728", dots: true },
    { y: uh2, color: "#d62728" },
  ], { xlabels: ["day 1", `day ${uh2.length}`] });
}

const colors = { "0.05": "#9467bd", "0.5": "#ff7f0e", "0.95": "#8c564b", "0": "#17becf" };
let demo = null;
let runs = [];

function drawHydrograph() {
  if (!demo) return;
  const obs = demo.observed();
  const series = [
    { y: demo.truth(), color: "#bbb", width: 1 },
    { y: obs, color: "#222", dots: true },
    ...runs.map((r) => ({ y: r.sim, color: colors[r.level] })),
  ];
  plotLines($("q-canvas"), series, { xlabels: ["validation day 1", "day 365"] });
  $("q-legend").innerHTML =
    '<span><i style="background:#222"></i>observed</span><span><i style="background:#bbb"></i>noise-free</span>' +
    runs.map((r) => `<span><i style="background:${colors[r.level]}"></i>${r.label}</span>`).join("");
  $("q-table").textContent = runs
    .map((r) => `${r.label.padEnd(14)} coverage ${r.coverage.toFixed(3)}  score ${r.score.toFixed(4)}  ` +
      `evals ${r.evals}  x = [${r.params.map((v) => v.toPrecision(4)).join(", ")}]`)
    .join("\n");
}

function newBasin() {
  try {
    demo = new QuantileDemo(parseInt($("q-seed").value, 10), parseFloat($("q-sigma").value),
      parseInt($("q-years").value, 10));
    runs = [];
    $("status").textContent = "";
    drawHydrograph();
  } catch (e) {
    $("status").textContent = String(e);
  }
}

function calibrateAt(level) {
  $("status").textContent = "calibrating...";
  setTimeout(() => {
    try {
      const r = demo.calibrate(level);
      const label = level === 0 ? "squared error" : `q${level}`;
      runs = runs.filter((x) => x.level !== String(level));
      runs.push({ level: String(level), label, sim: r.simulated, coverage: r.coverage, score: r.score,
        evals: r.evaluations, params: Array.from(r.params) });
      r.free();
      $("status").textContent = "";
      drawHydrograph();
    } catch (e) {
      $("status").textContent = String(e);
    }
  }, 10);
}

await init();
$("status").textContent = "";
$("pb-level").addEventListener("input", drawPinball);
$("uh-x4").addEventListener("input", drawUh);
$("q-new").addEventListener("click", newBasin);
$("q-clear").addEventListener("click", () => { runs = []; drawHydrograph(); });
document.querySelectorAll("button[data-level]").forEach((b) =>
  b.addEventListener("click", () => calibrateAt(parseFloat(b.dataset.level))));
drawPinball();
drawUh();
newBasin();
