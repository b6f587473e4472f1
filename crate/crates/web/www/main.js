import init, { track_demo, pmf_demo, assignment_demo } from "./pkg/vistrack_web.js";

const $ = (id) => document.getElementById(id);
const KIND_COLORS = { clean: "#2a7", mislabeled: "#d33", spurious: "#e90", occluded: "#888" };

function guard(out, f) {
  try {
    f();
  } catch (e) {
    $(out).innerHTML = `<p class="err">${e.message ?? e}</p>`;
  }
}

function slotColor(slot) {
  return slot === null ? "#fff" : `hsl(${(slot * 67) % 360} 65% 55%)`;
}

function timeline(title, rows, hidden, frames) {
  let html = `<h3>${title}</h3>`;
  rows.forEach((row, i) => {
    html += `<div class="grid" style="grid-template-columns: repeat(${frames}, 1fr)">`;
    row.forEach((slot, f) => {
      const bg = hidden[i][f] ? "#eee" : slotColor(slot);
      html += `<div title="frame ${f}, slot ${slot ?? "-"}" style="background:${bg}"></div>`;
    });
    html += "</div>";
  });
  return html;
}

function runTrack() {
  $("t-lambda-v").textContent = $("t-lambda").value;
  guard("t-out", () => {
    const r = JSON.parse(track_demo(+$("t-seed").value, +$("t-lambda").value, +$("t-sigma").value, $("t-hold").checked));
    const row = (name, s) =>
      `<tr><th>${name}</th>${["ap", "ap50", "ap75", "ar1", "ar10"].map((k) => `<td>${s[k].toFixed(3)}</td>`).join("")}<td>${s.id_switches}</td></tr>`;
    $("t-out").innerHTML =
      `<table class="m"><tr><th></th><th>AP</th><th>AP50</th><th>AP75</th><th>AR1</th><th>AR10</th><th>ID switches</th></tr>` +
      row("memory", r.memory) + row("baseline", r.baseline) + "</table>" +
      "<p>One row per object in the first video, one cell per frame, colored by the slot that covers it. Grey: object hidden.</p>" +
      timeline("memory", r.memory_rows, r.hidden, r.num_frames) +
      timeline("baseline", r.baseline_rows, r.hidden, r.num_frames);
  });
}

function plot(points, tau) {
  const c = $("p-plot").getContext("2d");
  const W = c.canvas.width, H = c.canvas.height, pad = 30;
  const x = (v) => pad + ((v - 0.4) / 0.6) * (W - 2 * pad);
  const y = (v) => H - pad - ((v + 0.2) / 1.2) * (H - 2 * pad);
  c.clearRect(0, 0, W, H);
  c.fillStyle = "#444";
  c.fillText("class score", W / 2 - 25, H - 8);
  c.fillText("prototype cosine", 4, 14);
  for (const p of points) {
    c.fillStyle = KIND_COLORS[p.kind];
    c.fillRect(x(p.class_score) - 2, y(p.similarity) - 2, 4, 4);
  }
  c.strokeStyle = "#000";
  c.beginPath();
  c.moveTo(pad, y(tau));
  c.lineTo(W - pad, y(tau));
  c.stroke();
}

function runPmf() {
  const tau = +$("p-tau").value;
  $("p-tau-v").textContent = tau.toFixed(2);
  guard("p-out", () => {
    const r = JSON.parse(pmf_demo(+$("p-seed").value, tau, +$("p-noise").value));
    let html = `<table class="m"><tr><th>detection</th><th>total</th><th>after score filter</th><th>after prototype filter</th></tr>`;
    for (const [kind, n] of Object.entries(r.counts)) {
      html += `<tr><th style="color:${KIND_COLORS[kind]}">${kind}</th><td>${n.total}</td><td>${n.after_score}</td><td>${n.after_pmf}</td></tr>`;
    }
    $("p-out").innerHTML = html + `</table><p>${r.prototypes} prototypes; points above the line are kept.</p>`;
    plot(r.points, tau);
  });
}

function runAssign() {
  guard("a-out", () => {
    const r = JSON.parse(assignment_demo($("a-matrix").value, $("a-max").checked));
    const pairs = r.pairs.map(([i, j]) => `row ${i} &rarr; col ${j}`).join("<br>");
    $("a-out").innerHTML = `<p>${r.rows}&times;${r.cols}, objective ${r.objective.toFixed(4)}</p><p>${pairs}</p>`;
  });
}

await init();
for (const id of ["t-seed", "t-lambda", "t-sigma", "t-hold"]) $(id).addEventListener("input", runTrack);
for (const id of ["p-seed", "p-tau", "p-noise"]) $(id).addEventListener("input", runPmf);
for (const id of ["a-matrix", "a-max"]) $(id).addEventListener("input", runAssign);
runTrack();
runPmf();
runAssign();
