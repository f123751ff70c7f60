import init, { modulate_curve, harmonic, ToyRun } from "./pkg/zsl_demo.js";

const $ = (id) => document.getElementById(id);

function drawCurve() {
  const w = parseFloat($("w").value);
  const b = parseFloat($("b").value);
  $("wv").textContent = w.toFixed(1);
  $("bv").textContent = b.toFixed(1);
  const xs = [];
  for (let i = 0; i <= 100; i++) xs.push(-4 + (8 * i) / 100);
  let ys;
  try {
    ys = modulate_curve($("variant").value, w, b, new Float64Array(xs));
    $("curve-err").textContent = "";
  } catch (e) {
    $("curve-err").textContent = String(e);
    return;
  }
  const c = $("curve");
  const g = c.getContext("2d");
  const sx = (x) => ((x + 4) / 8) * c.width;
  const sy = (y) => c.height / 2 - (y / 16) * c.height;
  g.clearRect(0, 0, c.width, c.height);
  g.strokeStyle = "#ccc";
  g.beginPath();
  g.moveTo(0, sy(0)); g.lineTo(c.width, sy(0));
  g.moveTo(sx(0), 0); g.lineTo(sx(0), c.height);
  g.stroke();
  g.strokeStyle = "#999";
  g.setLineDash([4, 4]);
  g.beginPath();
  g.moveTo(sx(-4), sy(-4)); g.lineTo(sx(4), sy(4));
  g.stroke();
  g.setLineDash([]);
  g.strokeStyle = "#c33";
  g.lineWidth = 2;
  g.beginPath();
  xs.forEach((x, i) => (i ? g.lineTo(sx(x), sy(ys[i])) : g.moveTo(sx(x), sy(ys[i]))));
  g.stroke();
  g.lineWidth = 1;
}

function updateHarmonic() {
  const u = parseFloat($("u").value) || 0;
  const s = parseFloat($("s").value) || 0;
  $("h").textContent = harmonic(u, s).toFixed(2);
}

let run = null;
let stopping = false;

function log(line) {
  $("log").textContent = line;
}

async function train() {
  $("start").disabled = true;
  $("stop").disabled = false;
  $("eval").disabled = false;
  stopping = false;
  run = new ToyRun(parseInt($("seed").value, 10) || 0);
  const target = run.targetEpochs();
  while (!stopping && run.epoch() < target) {
    const epoch = run.step(20);
    const [ld, lg, lad, lcls] = run.losses();
    log(`epoch ${epoch}/${target}  l_d ${ld.toFixed(3)}  l_g ${lg.toFixed(3)}  l_ad ${lad.toFixed(3)}  l_cls ${lcls.toFixed(3)}`);
    await new Promise((r) => setTimeout(r, 0));
  }
  $("start").disabled = false;
  $("stop").disabled = true;
  if (!stopping) evaluate();
}

function evaluate() {
  if (!run) return;
  const acc = run.evaluate(100);
  const rows = Array.from(acc, (a, i) => `unseen class ${8 + i}: ${(100 * a).toFixed(1)}%`);
  log($("log").textContent + "\n" + rows.join("\n"));
}

await init();
$("status").textContent = "";
for (const id of ["variant", "w", "b"]) $(id).addEventListener("input", drawCurve);
for (const id of ["u", "s"]) $(id).addEventListener("input", updateHarmonic);
$("start").addEventListener("click", () => train().catch((e) => log(String(e))));
$("stop").addEventListener("click", () => (stopping = true));
$("eval").addEventListener("click", () => {
  try { evaluate(); } catch (e) { log(String(e)); }
});
drawCurve();
updateHarmonic();
