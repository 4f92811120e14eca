import init, { renderGlyph, averagePrecision, biclusterDemo } from "./pkg/fontparts_web.js";

const $ = (id) => document.getElementById(id);

function drawGlyph() {
  const view = renderGlyph($("letter").value, $("serif").checked, $("jaggy").checked,
    $("rounded").checked, $("constant").checked, 64, BigInt($("glyph-seed").value || 0));
  const canvas = $("glyph");
  const ctx = canvas.getContext("2d");
  const n = view.size;
  const scale = canvas.width / n;
  const img = ctx.createImageData(n, n);
  const px = view.pixels();
  for (let i = 0; i < px.length; i++) {
    img.data.set([px[i], px[i], px[i], 255], 4 * i);
  }
  // draw at 1:1 then scale up
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, canvas.width, canvas.height);

  const kp = view.keypoints();
  ctx.strokeStyle = "#d33";
  for (let i = 0; i < kp.length; i += 4) {
    const x = (kp[i] + 0.5) * scale, y = (kp[i + 1] + 0.5) * scale;
    const r = 3 * kp[i + 2] * scale / 2;
    ctx.beginPath();
    ctx.arc(x, y, r, 0, 2 * Math.PI);
    ctx.moveTo(x, y);
    ctx.lineTo(x + r * Math.cos(kp[i + 3]), y + r * Math.sin(kp[i + 3]));
    ctx.stroke();
  }
  $("glyph-out").textContent = `${view.keypointCount} keypoints`;
  view.free();
}

function computeAp() {
  const tokens = $("scores").value.trim().split(/[\s,]+/).filter(Boolean);
  const scores = new Float64Array(tokens.map((t) => parseFloat(t)));
  const relevant = new Uint8Array(tokens.map((t) => (t.endsWith("*") ? 1 : 0)));
  try {
    $("ap-out").textContent = `AP = ${averagePrecision(scores, relevant).toFixed(6)}`;
  } catch (e) {
    $("ap-out").textContent = e.message ?? String(e);
  }
}

function heat(canvas, rows, cols, at) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width / cols, h = canvas.height / rows;
  let lo = Infinity, hi = -Infinity;
  for (let i = 0; i < rows; i++) for (let j = 0; j < cols; j++) {
    lo = Math.min(lo, at(i, j)); hi = Math.max(hi, at(i, j));
  }
  for (let i = 0; i < rows; i++) for (let j = 0; j < cols; j++) {
    const t = (at(i, j) - lo) / (hi - lo || 1);
    ctx.fillStyle = `hsl(${240 - 240 * t}, 70%, 50%)`;
    ctx.fillRect(j * w, i * h, Math.ceil(w), Math.ceil(h));
  }
}

function runBicluster() {
  const noise = parseFloat($("noise").value);
  const view = biclusterDemo(40, 30, 4, 3, noise, BigInt($("bi-seed").value || 0));
  const { rows, cols } = view;
  const v = view.values(), rl = view.rowLabels(), cl = view.colLabels();
  heat($("raw"), rows, cols, (i, j) => v[i * cols + j]);
  const byLabel = (labels) => [...labels.keys()].sort((a, b) => labels[a] - labels[b] || a - b);
  const ro = byLabel(rl), co = byLabel(cl);
  heat($("sorted"), rows, cols, (i, j) => v[ro[i] * cols + co[j]]);
  $("bi-out").textContent = `ARI vs planted blocks: ${view.ari.toFixed(3)}`;
  view.free();
}

await init();
for (const c of "HOALTCEVUZFN") $("letter").add(new Option(c, c));
$("render").onclick = drawGlyph;
$("ap").onclick = computeAp;
$("bicluster").onclick = runBicluster;
$("noise").oninput = () => { $("noise-val").textContent = parseFloat($("noise").value).toFixed(2); };
drawGlyph();
computeAp();
runBicluster();
