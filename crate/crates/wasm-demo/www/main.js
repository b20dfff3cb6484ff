import init, { activation_curve, commuting_flow, compare } from "./pkg/snn_wasm_demo.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);
const COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

function plot(canvas, xs, series, { logY = false } = {}) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 40;
  ctx.clearRect(0, 0, w, h);
  const tf = (v) => (logY ? Math.log10(Math.max(v, 1e-300)) : v);
  const ys = series.flatMap((s) => s.values.map(tf)).filter(Number.isFinite);
  let [y0, y1] = [Math.min(...ys), Math.max(...ys)];
  if (y0 === y1) { y0 -= 1; y1 += 1; }
  const [x0, x1] = [xs[0], xs[xs.length - 1]];
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad - ((tf(y) - y0) / (y1 - y0)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, w - 2 * pad, h - 2 * pad);
  ctx.fillStyle = "#444";
  ctx.font = "11px sans-serif";
  const fmt = (v) => (logY ? `1e${v.toFixed(0)}` : v.toPrecision(3));
  ctx.fillText(fmt(y1), 2, pad + 4);
  ctx.fillText(fmt(y0), 2, h - pad);
  ctx.fillText(String(+x0.toPrecision(3)), pad, h - pad + 14);
  ctx.fillText(String(+x1.toPrecision(3)), w - pad - 20, h - pad + 14);

  series.forEach((s, i) => {
    ctx.strokeStyle = COLORS[i % COLORS.length];
    ctx.beginPath();
    s.values.forEach((v, j) => (j ? ctx.lineTo(px(xs[j]), py(v)) : ctx.moveTo(px(xs[j]), py(v))));
    ctx.stroke();
    ctx.fillStyle = ctx.strokeStyle;
    ctx.fillText(s.label, w - pad - 160, pad + 14 + 14 * i);
  });
}

function heatmap(title, m, scale) {
  const n = m.length, k = m[0].length, cell = Math.max(4, Math.floor(200 / Math.max(n, k)));
  const canvas = Object.assign(document.createElement("canvas"), { width: k * cell, height: n * cell });
  const ctx = canvas.getContext("2d");
  m.forEach((row, i) => row.forEach((v, j) => {
    const g = Math.round(255 * Math.min(1, Math.max(0, v / scale)));
    ctx.fillStyle = `rgb(${g},${g},${g})`;
    ctx.fillRect(j * cell, i * cell, cell, cell);
  }));
  const fig = document.createElement("figure");
  fig.append(canvas, Object.assign(document.createElement("figcaption"), { textContent: title }));
  return fig;
}

function guard(statusId, fn) {
  return () => {
    const status = $(statusId);
    status.className = "status";
    status.textContent = "running...";
    setTimeout(() => {
      const t0 = performance.now();
      try {
        const note = fn();
        status.textContent = `${note ?? ""} (${((performance.now() - t0) / 1000).toFixed(2)} s)`;
      } catch (e) {
        status.className = "status error";
        status.textContent = String(e);
      }
    }, 0);
  };
}

function runActivation() {
  const r = JSON.parse(activation_curve($("act-name").value, $("act-clamp").checked, num("act-lo"), num("act-hi"), 400));
  plot($("act-plot"), r.x, [{ label: "gamma(x)", values: r.gamma }, { label: "gamma'(x)", values: r.gamma_prime }]);
  return `bounded: ${r.bounded}, monotone: ${r.monotone}, derivative error ${r.max_derivative_error.toExponential(1)}`;
}

function runFlow() {
  const r = JSON.parse(commuting_flow(num("flow-seed"), num("flow-d"), num("flow-m"), num("flow-k"), num("flow-dt"), num("flow-steps")));
  plot($("flow-plot"), r.time, [
    { label: "loss", values: r.loss },
    { label: "max |sigma* - H alpha|", values: r.residual_inf },
    { label: "|nuclear norm - 1|", values: r.nuclear_norm.map((v) => Math.abs(v - 1)) },
  ], { logY: true });
  const last = r.loss.length - 1;
  return `final loss ${r.loss[last].toExponential(2)}, nuclear norm ${r.nuclear_norm[last].toFixed(6)}`;
}

function runCompare() {
  const r = JSON.parse(compare(num("cmp-seed"), num("cmp-d"), num("cmp-m"), num("cmp-lr"), num("cmp-snn"), num("cmp-lrsteps")));
  const scale = Math.max(...r.truth.flat());
  const maps = $("cmp-maps");
  maps.replaceChildren(
    heatmap("ground truth", r.truth, scale),
    heatmap(`SNN: nuclear ${r.snn.nuclear_norm.toFixed(3)}, PSNR ${r.snn.psnr.toFixed(1)} dB`, r.snn.matrix, scale),
    heatmap(`linear regression: nuclear ${r.linear_regression.nuclear_norm.toFixed(3)}, PSNR ${r.linear_regression.psnr.toFixed(1)} dB`, r.linear_regression.matrix, scale),
  );
}

await init();
$("act-run").onclick = guard("act-status", runActivation);
$("flow-run").onclick = guard("flow-status", runFlow);
$("cmp-run").onclick = guard("cmp-status", runCompare);
$("act-run").click();
