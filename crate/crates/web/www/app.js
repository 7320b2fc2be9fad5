import init, { positionalEncoding, segmentationTrace, clipLayout } from "./pkg/skelsign_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function report(noteId, fn) {
  const note = $(noteId);
  try {
    note.classList.remove("error");
    fn(note);
  } catch (e) {
    note.classList.add("error");
    note.textContent = e.message ?? String(e);
  }
}

function drawHeatmap() {
  report("pe-note", (note) => {
    const pe = JSON.parse(positionalEncoding(num("pe-len"), num("pe-dim")));
    const canvas = $("pe-canvas");
    const ctx = canvas.getContext("2d");
    const cw = canvas.width / pe.cols;
    const ch = canvas.height / pe.rows;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    for (let r = 0; r < pe.rows; r++) {
      for (let c = 0; c < pe.cols; c++) {
        const v = pe.values[r * pe.cols + c];
        const red = v > 0 ? 255 : Math.round(255 * (1 + v));
        const blue = v < 0 ? 255 : Math.round(255 * (1 - v));
        const green = Math.round(255 * (1 - Math.abs(v)));
        ctx.fillStyle = `rgb(${red},${green},${blue})`;
        ctx.fillRect(c * cw, r * ch, Math.ceil(cw), Math.ceil(ch));
      }
    }
    note.textContent = `${pe.rows} positions x ${pe.cols} dimensions; red = +1, blue = -1`;
  });
}

function drawTrace() {
  report("sg-note", (note) => {
    const t = JSON.parse(segmentationTrace(
      num("sg-before"), num("sg-moving"), num("sg-after"), num("sg-speed"),
      num("sg-start"), num("sg-stop"), num("sg-shold"), num("sg-ehold"), num("sg-max"), num("sg-seed"),
    ));
    const canvas = $("sg-canvas");
    const ctx = canvas.getContext("2d");
    const n = t.states.length;
    const w = canvas.width / n;
    const plotTop = 30;
    const plotH = canvas.height - plotTop - 10;
    const peak = Math.max(t.config.start_threshold * 2, ...t.signal.filter((s) => s !== null));
    const y = (v) => plotTop + plotH * (1 - v / peak);
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    t.states.forEach((s, i) => {
      if (s === "recording") {
        ctx.fillStyle = "#3a7";
        ctx.fillRect(i * w, 16, Math.ceil(w), 8);
      }
    });
    ctx.fillStyle = "#e8a33c";
    for (const c of t.clips) ctx.fillRect(c.first * w, 4, (c.last - c.first + 1) * w, 8);
    ctx.strokeStyle = "#c33";
    for (const th of [t.config.start_threshold, t.config.stop_threshold]) {
      ctx.beginPath();
      ctx.moveTo(0, y(th));
      ctx.lineTo(canvas.width, y(th));
      ctx.stroke();
    }
    ctx.fillStyle = "#246";
    t.signal.forEach((s, i) => {
      if (s !== null) ctx.fillRect(i * w + w * 0.2, y(s), Math.max(1, w * 0.6), plotTop + plotH - y(s));
    });
    const spans = t.clips.map((c) => `${c.first}..${c.last} (${c.frames} frames)`).join(", ");
    note.textContent = `${n} frames, ${t.clips.length} clip(s)` + (spans ? `: ${spans}` : "");
  });
}

function drawLayout() {
  report("cl-note", (note) => {
    const n = num("cl-n");
    const l = JSON.parse(clipLayout(n, $("cl-sampler").value.trim(), num("cl-t"), num("cl-seq")));
    const canvas = $("cl-canvas");
    const ctx = canvas.getContext("2d");
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    const fw = canvas.width / n;
    ctx.fillStyle = "#ddd";
    ctx.fillRect(0, 10, canvas.width, 30);
    ctx.fillStyle = "#246";
    for (const i of l.sampled) ctx.fillRect(i * fw, 10, Math.max(1, fw), 30);
    const sw = canvas.width / l.kinds.length;
    const colors = { data: "#246", eos: "#e8a33c", pad: "#ccc" };
    l.kinds.forEach((k, i) => {
      ctx.fillStyle = colors[k];
      ctx.fillRect(i * sw + 1, 70, sw - 2, 30);
    });
    note.textContent = `kept ${l.sampled.length} of ${n} frames: [${l.sampled.join(", ")}]; ` +
      `model sequence of ${l.kinds.length} slots (blue data, orange end marker, grey padding)`;
  });
}

await init();
for (const [ids, draw] of [
  [["pe-len", "pe-dim"], drawHeatmap],
  [["sg-before", "sg-moving", "sg-after", "sg-speed", "sg-start", "sg-stop", "sg-shold", "sg-ehold", "sg-max", "sg-seed"], drawTrace],
  [["cl-n", "cl-sampler", "cl-t", "cl-seq"], drawLayout],
]) {
  for (const id of ids) $(id).addEventListener("input", draw);
  draw();
}
