import init, { intent_names, maneuver, Playground } from "./pkg/intentflow_demo.js";

const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const $ = (id) => document.getElementById(id);

// Bird's-eye view: +x forward maps to up, +y left maps to left.
function drawBev(canvas, series) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  let xmin = -2, xmax = 10, ymin = -6, ymax = 6;
  for (const s of series) for (const [x, y] of s.points) {
    xmin = Math.min(xmin, x - 2); xmax = Math.max(xmax, x + 2);
    ymin = Math.min(ymin, y - 2); ymax = Math.max(ymax, y + 2);
  }
  const scale = Math.min((h - 20) / (xmax - xmin), (w - 20) / (ymax - ymin));
  const cx = w / 2, cy = h / 2, xm = (xmin + xmax) / 2, ym = (ymin + ymax) / 2;
  const px = (x, y) => [cx - (y - ym) * scale, cy - (x - xm) * scale];

  ctx.strokeStyle = "#eee"; ctx.lineWidth = 1;
  for (let g = Math.ceil(xmin / 2) * 2; g <= xmax; g += 2) {
    const [, yy] = px(g, 0); ctx.beginPath(); ctx.moveTo(0, yy); ctx.lineTo(w, yy); ctx.stroke();
  }
  for (let g = Math.ceil(ymin / 2) * 2; g <= ymax; g += 2) {
    const [xx] = px(0, g); ctx.beginPath(); ctx.moveTo(xx, 0); ctx.lineTo(xx, h); ctx.stroke();
  }
  const [ox, oy] = px(0, 0);
  ctx.fillStyle = "#000";
  ctx.beginPath(); ctx.moveTo(ox, oy - 7); ctx.lineTo(ox - 5, oy + 5); ctx.lineTo(ox + 5, oy + 5); ctx.fill();

  for (const s of series) {
    ctx.strokeStyle = s.color; ctx.lineWidth = s.width || 2;
    ctx.setLineDash(s.dash || []);
    ctx.beginPath(); ctx.moveTo(ox, oy);
    for (const [x, y] of s.points) ctx.lineTo(...px(x, y));
    ctx.stroke();
    ctx.setLineDash([]);
    if (!s.dash) {
      ctx.fillStyle = s.color;
      for (const [x, y] of s.points) { const [a, b] = px(x, y); ctx.fillRect(a - 1.5, b - 1.5, 3, 3); }
    }
  }
}

function drawLoss(canvas, losses) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  ctx.clearRect(0, 0, w, h);
  if (losses.length < 2) return;
  const logs = losses.map((l) => Math.log10(l));
  const lo = Math.min(...logs), hi = Math.max(...logs) + 1e-9;
  ctx.strokeStyle = "#1f77b4"; ctx.beginPath();
  logs.forEach((l, i) => {
    const x = (i / (logs.length - 1)) * (w - 10) + 5;
    const y = h - 5 - ((l - lo) / (hi - lo)) * (h - 20);
    i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
  });
  ctx.stroke();
  ctx.fillStyle = "#444";
  ctx.fillText(`FM loss (log scale) ${losses[losses.length - 1].toFixed(3)}`, 8, 12);
}

function describe(v) {
  const m = v.meta_action;
  return `${m.longitudinal} / ${m.lateral}`;
}

function explorer() {
  const sel = $("m-intent");
  for (const n of JSON.parse(intent_names())) sel.add(new Option(n, n));
  sel.value = "turning_left";
  const update = () => {
    $("m-speed-v").textContent = $("m-speed").value;
    $("m-noise-v").textContent = $("m-noise").value;
    const v = JSON.parse(maneuver(sel.value, +$("m-speed").value, +$("m-noise").value, BigInt($("m-seed").value || 0)));
    const cls = v.consistent ? "ok" : "bad";
    $("m-out").innerHTML = `meta-action: ${describe(v)}\n<span class="${cls}">${v.consistent ? "consistent" : "inconsistent"} with ${v.intent}</span>`;
    drawBev($("m-canvas"), [{ points: v.points, color: PALETTE[0] }]);
  };
  for (const id of ["m-intent", "m-speed", "m-noise", "m-seed"]) $(id).addEventListener("input", update);
  update();
}

let playground = null;

function sweep() {
  $("s-w-v").textContent = $("s-w").value;
  if (!playground) return;
  const n = playground.num_scenes();
  $("s-count").textContent = n;
  if (!n) return;
  const scene = Math.min(Math.max(0, +$("s-scene").value), n - 1);
  const distilled = $("s-distilled").checked;
  const v = JSON.parse(playground.sweep(scene, +$("s-w").value, distilled, $("s-all").checked, BigInt($("s-seed").value || 0)));
  const series = [{ points: v.ground_truth, color: "#000", dash: [5, 4] }];
  const legend = [`<li><span class="sw" style="background:#000"></span>ground truth (${v.gt_intent})</li>`];
  v.samples.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    series.push({ points: s.points, color });
    const mark = s.consistent ? '<span class="ok">&#10003;</span>' : '<span class="bad">&#10007;</span>';
    legend.push(`<li><span class="sw" style="background:${color}"></span>${s.intent} ${mark} <small>${describe(s)}</small></li>`);
  });
  drawBev($("s-canvas"), series);
  $("s-legend").innerHTML = legend.join("");
  const ok = v.samples.filter((s) => s.consistent).length;
  $("s-info").textContent = `admissible: ${v.admissible.join(", ")} | ${ok}/${v.samples.length} faithful | ${v.forwards_per_sample} net forwards per sample`;
  $("s-w").disabled = distilled;
}

function trainer() {
  $("t-start").addEventListener("click", () => {
    $("t-start").disabled = true;
    $("t-distill").disabled = true;
    $("s-distilled").disabled = true;
    $("s-distilled").checked = false;
    playground = new Playground(+$("t-seq").value, +$("t-epochs").value, 0n);
    const tick = () => {
      const s = JSON.parse(playground.train(20));
      $("t-progress").max = s.total;
      $("t-progress").value = s.step;
      $("t-status").textContent = `step ${s.step}/${s.total}`;
      drawLoss($("t-canvas"), JSON.parse(playground.loss_history()));
      if (s.step % 100 < 20 || s.finished) sweep();
      if (s.finished) {
        $("t-start").disabled = false;
        $("t-distill").disabled = false;
        $("t-status").textContent = `trained ${s.total} steps`;
      } else {
        requestAnimationFrame(tick);
      }
    };
    requestAnimationFrame(tick);
  });
  $("t-distill").addEventListener("click", () => {
    $("t-status").textContent = "distilling...";
    setTimeout(() => {
      const n = playground.distill();
      $("t-status").textContent = `student fitted in ${n} steps`;
      $("s-distilled").disabled = false;
      sweep();
    }, 10);
  });
  $("t-ckpt").addEventListener("change", async (e) => {
    const file = e.target.files[0];
    if (!file) return;
    if (!playground) playground = new Playground(+$("t-seq").value, 1, 0n);
    try {
      playground.load_checkpoint(new Uint8Array(await file.arrayBuffer()));
      $("t-status").textContent = `loaded ${file.name}`;
      $("s-distilled").disabled = !playground.has_student();
      $("t-distill").disabled = false;
      sweep();
    } catch (err) {
      $("t-status").textContent = `load failed: ${err.message ?? err}`;
    }
  });
}

await init();
explorer();
trainer();
for (const id of ["s-scene", "s-w", "s-distilled", "s-all", "s-seed"]) $(id).addEventListener("input", sweep);
sweep();
