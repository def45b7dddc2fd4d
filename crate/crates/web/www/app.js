import init, { control_trajectory, slowdown_curve, run_preset } from "./pkg/dynims_web.js";

const $ = (id) => document.getElementById(id);

function plot(canvas, series, opts = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const xs = series.flatMap((s) => s.x), ys = series.flatMap((s) => s.y);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y0 = opts.y0 ?? Math.min(0, ...ys), y1 = opts.y1 ?? Math.max(...ys) * 1.05;
  const px = (x) => pad + ((x - x0) / (x1 - x0 || 1)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - y0) / (y1 - y0 || 1)) * (h - 2 * pad);
  ctx.strokeStyle = "#000";
  ctx.beginPath();
  ctx.moveTo(pad, pad / 2);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad / 2, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#000";
  ctx.font = "11px sans-serif";
  ctx.fillText(y1.toFixed(1), 2, py(y1) + 4);
  ctx.fillText(y0.toFixed(1), 2, py(y0));
  ctx.fillText(x0.toFixed(2), pad, h - pad + 14);
  ctx.fillText(x1.toFixed(2), w - pad - 20, h - pad + 14);
  series.forEach((s, k) => {
    ctx.strokeStyle = s.color;
    ctx.setLineDash(s.dash ? [4, 4] : []);
    ctx.beginPath();
    s.x.forEach((x, i) => (i ? ctx.lineTo(px(x), py(s.y[i])) : ctx.moveTo(px(x), py(s.y[i]))));
    ctx.stroke();
    ctx.fillStyle = s.color;
    ctx.fillText(s.label, w - 150, 14 + k * 14);
  });
  ctx.setLineDash([]);
}

function drawTrajectory() {
  const lambda = Number($("lambda").value);
  $("lambda-val").textContent = lambda.toFixed(2);
  const r = JSON.parse(control_trajectory(lambda, Number($("exec").value), Number($("u0").value), 60));
  if (r.error) return;
  const x = r.capacity_gb.map((_, i) => i);
  plot($("traj"), [
    { x, y: r.capacity_gb, color: "#337ab7", label: "capacity GB" },
    { x, y: x.map(() => r.fixed_point_gb), color: "#999", dash: true, label: "fixed point" },
  ], { y0: 0, y1: 62 });
}

function drawSlowdown() {
  const swap = Number($("swap").value);
  $("swap-val").textContent = swap.toFixed(1);
  const r = JSON.parse(slowdown_curve(swap));
  plot($("slow"), [{ x: r.utilization, y: r.slowdown, color: "#d9534f", label: "slowdown" }], { y0: 0 });
}

function runPreset() {
  $("summary").textContent = "running...";
  setTimeout(() => {
    const r = JSON.parse(run_preset($("preset").value, Number($("dataset").value)));
    if (r.error) {
      $("summary").textContent = r.error;
      return;
    }
    const done = r.completion_s == null ? "did not finish" : `${r.completion_s.toFixed(1)} s`;
    $("summary").textContent =
      `${r.name}: job ${done}, hit ratio ${(r.hit_ratio ?? 0).toFixed(3)}\n` +
      `iterations (s): ${r.iterations_s.map((t) => t.toFixed(1)).join(", ")}`;
    plot($("timeline"), [
      { x: r.t_s, y: r.exec_gb, color: "#d9534f", label: "exec GB" },
      { x: r.t_s, y: r.storage_gb, color: "#337ab7", label: "storage used GB" },
      { x: r.t_s, y: r.capacity_gb, color: "#5cb85c", dash: true, label: "capacity GB" },
    ], { y0: 0, y1: r.total_gb });
  }, 10);
}

await init();
["lambda", "exec", "u0"].forEach((id) => $(id).addEventListener("input", drawTrajectory));
$("swap").addEventListener("input", drawSlowdown);
$("go").addEventListener("click", runPreset);
drawTrajectory();
drawSlowdown();
