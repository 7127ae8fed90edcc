const VERSION = 1;
const ws = new WebSocket(`ws://${location.host}/session`);
const canvas = document.getElementById('road');
const ctx = canvas.getContext('2d');
const status = document.getElementById('status');
let cfg = null;
let snap = null;
let held = 0;

const send = (m) => ws.readyState === 1 && ws.send(JSON.stringify({ ...m, version: VERSION }));

document.getElementById('start').onclick = () => send({ type: 'control', action: 'start' });
document.getElementById('reset').onclick = () => send({ type: 'control', action: 'reset' });
document.getElementById('planner').onchange = (e) =>
  send({ type: 'control', action: 'select_planner', planner: e.target.value });

// Held keys are re-sent every frame; the server keeps only the latest per tick.
addEventListener('keydown', (e) => {
  if (e.key === 'ArrowUp') held = 1;
  if (e.key === 'ArrowDown') held = -1;
});
addEventListener('keyup', (e) => {
  if (e.key === 'ArrowUp' || e.key === 'ArrowDown') held = 0;
});
setInterval(() => {
  if (held !== 0 && cfg) {
    const a = cfg.action_set.human;
    send({ type: 'input', accel: held > 0 ? a[a.length - 1] : a[0] });
  }
}, 100);

ws.onmessage = (ev) => {
  const m = JSON.parse(ev.data);
  if (m.type === 'config') cfg = m;
  else if (m.type === 'snapshot') snap = m;
  else if (m.type === 'error') status.textContent = 'error: ' + m.message;
  draw();
};
ws.onclose = () => { status.textContent = 'disconnected'; };

function draw() {
  if (!cfg || !snap) return;
  const xmax = cfg.grid.x_robot.max + cfg.geometry.car_length;
  const lw = cfg.lanes.width;
  const sx = canvas.width / xmax;
  const sy = canvas.height / (3 * lw);
  // Robot lane centre at 75% of the height, y grows upwards.
  const py = (y) => canvas.height * 0.75 - (y - cfg.lanes.robot_lane_y) * sy;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.strokeStyle = '#ddd';
  ctx.setLineDash([12, 12]);
  ctx.beginPath();
  ctx.moveTo(0, py(cfg.lanes.robot_lane_y + lw / 2));
  ctx.lineTo(canvas.width, py(cfg.lanes.robot_lane_y + lw / 2));
  ctx.stroke();
  ctx.setLineDash([]);
  const car = (x, y, color) => {
    ctx.fillStyle = color;
    ctx.fillRect(x * sx, py(y + cfg.geometry.car_width / 2), cfg.geometry.car_length * sx,
                 cfg.geometry.car_width * sy);
  };
  const s = snap.state;
  car(s.x_h, cfg.lanes.human_lane_y, '#e0a030');
  car(s.x_r, s.y_r, '#3080e0');
  const lat = snap.belief.latent
    .map((t) => `k=${t.k} l=${t.lambda}: ${t.p.toFixed(2)}`).join('\n');
  status.textContent =
    `phase ${snap.phase}  t=${snap.t}  planner ${snap.planner}` +
    (snap.outcome ? `  outcome ${snap.outcome}` : '') +
    `\nrobot v=${s.v_r}  human v=${s.v_h}\n` + lat;
}
