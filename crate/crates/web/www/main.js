import init, { channel_trace, worked_example, storage_overhead } from "./pkg/tppd_web.js";

const $ = (id) => document.getElementById(id);

function call(out, f) {
  try {
    return JSON.parse(f());
  } catch (e) {
    out.innerHTML = `<span class="err">${e}</span>`;
    return null;
  }
}

function plotChannel(canvas, trace) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 30;
  const a = trace.associativity;
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ccc";
  ctx.fillStyle = "#666";
  ctx.font = "11px sans-serif";
  for (let m = 0; m <= a; m++) {
    const y = h - pad - (m / a) * (h - 2 * pad);
    ctx.beginPath(); ctx.moveTo(pad, y); ctx.lineTo(w - 5, y); ctx.stroke();
    ctx.fillText(String(m), 8, y + 4);
  }
  // The midpoint latency threshold sits at A/2 misses.
  const n = trace.rounds.length;
  const ty = h - pad - 0.5 * (h - 2 * pad);
  ctx.setLineDash([5, 4]);
  ctx.strokeStyle = "#888";
  ctx.beginPath(); ctx.moveTo(pad, ty); ctx.lineTo(w - 5, ty); ctx.stroke();
  ctx.setLineDash([]);
  const dx = (w - pad - 10) / Math.max(n, 1);
  trace.rounds.forEach((r, i) => {
    const x = pad + (i + 0.5) * dx;
    const jitter = r.bit ? -0.08 : 0.08;
    const y = h - pad - ((r.misses + jitter) / a) * (h - 2 * pad);
    ctx.fillStyle = r.bit ? "#1f5fbf" : "#c0392b";
    ctx.beginPath(); ctx.arc(x, y, n > 1000 ? 1.5 : 2.5, 0, 2 * Math.PI); ctx.fill();
  });
  ctx.fillStyle = "#666";
  ctx.fillText("round", w - 40, h - 8);
}

function runChannel() {
  const out = $("ch-out");
  const trace = call(out, () =>
    channel_trace($("ch-defense").value, Number($("ch-z").value), Number($("ch-bits").value), BigInt($("ch-seed").value)));
  if (!trace) return;
  const errors = trace.rounds.filter((r) => r.bit !== r.decoded).length;
  out.textContent = `${trace.defense}: accuracy ${trace.accuracy.toFixed(4)} over ${trace.rounds.length} bits ` +
    `(${errors} wrong), decode threshold ${trace.threshold} cycles`;
  plotChannel($("ch-plot"), trace);
}

function runExample() {
  const out = $("we-out");
  const ex = call(out, () => worked_example(Number($("we-z").value), $("we-bit").value === "1"));
  if (!ex) return;
  out.textContent = `probe: ${ex.probe_hits} hits, ${ex.probe_misses} misses`;
  const rows = ["<tr><th>phase</th><th>block</th><th>served by</th><th colspan=4>ways 0..3</th><th>CpS</th><th>CpT</th></tr>"];
  for (const s of ex.steps) {
    const ways = s.ways.map((b) => `<td class="${b ? b[0] : ""}">${b ?? "--"}</td>`).join("");
    const count = (c) => (c === null ? "-" : c);
    rows.push(`<tr class="${s.phase}"><td>${s.phase}</td><td class="${s.block[0]}">${s.block}</td>` +
      `<td class="level-${s.level}">${s.level}</td>${ways}<td>${count(s.spy_count)}</td><td>${count(s.trojan_count)}</td></tr>`);
  }
  $("we-table").innerHTML = rows.join("");
}

function runStorage() {
  const out = $("st-out");
  const s = call(out, () =>
    storage_overhead(BigInt($("st-sets").value), Number($("st-ways").value), BigInt($("st-id").value)));
  if (!s) return;
  out.textContent = `${s.bits_per_set} bits per set, ${s.total_bits} bits total = ${s.total_kib} KiB`;
}

await init();
$("ch-run").addEventListener("click", runChannel);
$("we-run").addEventListener("click", runExample);
$("st-run").addEventListener("click", runStorage);
runChannel();
runExample();
runStorage();
