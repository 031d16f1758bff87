import init, { Demo, evaluate } from './pkg/ghostline_web.js';

const COMPONENTS = [
  ['left jaw', '#ff6b6b'],
  ['right jaw', '#ffd166'],
  ['body', '#06d6a0'],
  ['shaft', '#4cc9f0'],
];

const $ = (id) => document.getElementById(id);
const canvas = $('view');
const ctx = canvas.getContext('2d');
let demo = null;
let playing = false;
let last = 0;

$('legend').innerHTML = COMPONENTS.map(([name, color]) => `<span style="color:${color}">&#9679; ${name}</span>`).join('');

function speed() {
  return Number($('speed').value);
}

// [n, x1, y1, ...] per component
function split(flat) {
  const out = [];
  let i = 0;
  for (let c = 0; c < COMPONENTS.length; c++) {
    const n = flat[i++];
    const pts = [];
    for (let k = 0; k < n; k++, i += 2) pts.push([flat[i], flat[i + 1]]);
    out.push(pts);
  }
  return out;
}

function draw() {
  if (!demo) return;
  const duration = demo.duration(speed());
  const clock = Number($('clock').value) * duration;
  const est = split(demo.frame(clock, speed()));
  const truth = split(demo.truth_frame(clock, speed()));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  let sum = 0;
  let count = 0;
  COMPONENTS.forEach(([, color], c) => {
    ctx.strokeStyle = color;
    ctx.fillStyle = color;
    for (const [px, py] of truth[c]) {
      ctx.beginPath();
      ctx.arc(px, py, 7, 0, 2 * Math.PI);
      ctx.stroke();
    }
    for (const [px, py] of est[c]) {
      ctx.beginPath();
      ctx.arc(px, py, 3.5, 0, 2 * Math.PI);
      ctx.fill();
    }
    if (est[c].length === truth[c].length) {
      est[c].forEach(([a, b], k) => {
        sum += Math.hypot(a - truth[c][k][0], b - truth[c][k][1]);
        count++;
      });
    }
  });
  $('clock-label').textContent = `${clock.toFixed(2)} / ${duration.toFixed(2)} s`;
  $('error').textContent = count ? `mean overlay error ${(sum / count).toFixed(2)} px over ${count} vertices` : 'tool out of view';
}

function build() {
  try {
    demo = new Demo(Number($('seed').value), $('preset').value);
    $('summary').textContent = demo.summary();
    canvas.width = demo.width();
    canvas.height = demo.height();
    $('clock').value = 0;
    draw();
  } catch (e) {
    demo = null;
    $('summary').textContent = `error: ${e.message}`;
  }
}

function tick(now) {
  if (!playing || !demo) return;
  const dt = (now - last) / 1000;
  last = now;
  const next = Number($('clock').value) + dt / demo.duration(speed());
  $('clock').value = Math.min(next, 1);
  draw();
  if (next >= 1) {
    playing = false;
    $('play').textContent = 'Play';
    return;
  }
  requestAnimationFrame(tick);
}

$('build').addEventListener('click', build);
$('clock').addEventListener('input', draw);
$('speed').addEventListener('input', () => {
  $('speed-label').textContent = `${speed()}x`;
  draw();
});
$('play').addEventListener('click', () => {
  playing = !playing;
  $('play').textContent = playing ? 'Pause' : 'Play';
  if (playing) {
    if (Number($('clock').value) >= 1) $('clock').value = 0;
    last = performance.now();
    requestAnimationFrame(tick);
  }
});
$('evaluate').addEventListener('click', () => {
  try {
    $('report').textContent = evaluate(Number($('seed').value), $('preset').value);
  } catch (e) {
    $('report').textContent = `error: ${e.message}`;
  }
});

await init();
build();
