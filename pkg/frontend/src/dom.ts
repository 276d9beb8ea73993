import { FreqMode, FreqWindow } from "./freq.js";
import { CouplingGrid, EtfKindName, KIND_FIELDS, KIND_NAMES } from "./grid.js";
import { PanelSession } from "./panel.js";

/** Build the whole panel under `root` once the session is live. */
export function mount(root: HTMLElement, session: PanelSession): void {
  const banner = el("div", "status");
  banner.textContent = "connecting";
  root.appendChild(banner);

  const body = el("div", "body");
  root.appendChild(body);

  let built = false;
  session.onStatus = (status) => {
    banner.textContent = status === "live" ? "connected" : status;
    root.classList.toggle("down", status !== "live");
    if (status === "live" && !built) {
      built = true;
      buildPanel(body, session);
    }
  };
}

function buildPanel(body: HTMLElement, session: PanelSession): void {
  body.appendChild(snapshotBar(session));
  for (const net of session.model.networks()) {
    const section = el("section", "network");
    section.appendChild(heading(net, session));
    const win = session.windows.get(net)!;
    section.appendChild(freqBlock(win));
    const grid = session.grids.get(net)!;
    section.appendChild(gridBlock(grid));
    section.appendChild(meterBlock(session, net));
    body.appendChild(section);
  }
}

function heading(net: string, session: PanelSession): HTMLElement {
  const h = el("h2");
  const modes = session.model.modes(net);
  h.textContent = `${net} (${modes} nodes)`;
  return h;
}

// tuning sliders

function freqBlock(win: FreqWindow): HTMLElement {
  const block = el("div", "freq");
  const bar = el("div", "modebar");
  for (const mode of ["ratio", "deviation", "absolute"] as FreqMode[]) {
    const b = el("button");
    b.textContent = mode;
    b.onclick = () => win.setMode(mode);
    bar.appendChild(b);
  }
  block.appendChild(bar);

  const sliders = new Map<string, { input: HTMLInputElement; out: HTMLElement }>();
  let dragging = "";
  for (const control of win.controls()) {
    const row = el("div", "slider");
    const label = el("label");
    label.textContent = control === "f0" ? "fundamental" : control.replace(".f0", "");
    const input = document.createElement("input");
    input.type = "range";
    input.min = "0";
    input.max = "8000";
    input.step = "any";
    const out = el("span", "value");
    input.oninput = () => win.drag(control, parseFloat(input.value));
    input.onpointerdown = () => {
      dragging = control;
    };
    input.onpointerup = () => {
      dragging = "";
    };
    row.append(label, input, out);
    block.appendChild(row);
    sliders.set(control, { input, out });
  }

  win.onDisplay = (control, value) => {
    const s = sliders.get(control);
    if (!s) return;
    s.out.textContent = Number.isFinite(value) ? value.toPrecision(6) : "";
    // slider ranges depend on the mode; rescale lazily around what we show
    if (control !== "f0") {
      if (win.mode === "ratio") {
        s.input.min = "0";
        s.input.max = "32";
      } else if (win.mode === "deviation") {
        s.input.min = "-100";
        s.input.max = "100";
      } else {
        s.input.min = "0";
        s.input.max = "8000";
      }
    }
    if (control !== dragging) s.input.value = String(value);
  };
  win.setMode("absolute");
  return block;
}

// coupling matrix

function gridBlock(grid: CouplingGrid): HTMLElement {
  const block = el("div", "couplings");
  const controls = el("div", "gridbar");
  const group = document.createElement("input");
  group.type = "checkbox";
  group.onchange = () => {
    grid.grouping = group.checked;
  };
  const groupLabel = el("label");
  groupLabel.append(group, document.createTextNode(" group"));
  controls.appendChild(groupLabel);

  const kindSel = document.createElement("select");
  for (const k of KIND_NAMES) {
    const o = document.createElement("option");
    o.value = k;
    o.textContent = k;
    kindSel.appendChild(o);
  }
  controls.appendChild(kindSel);

  const fields = el("span", "fields");
  const renderFields = () => {
    fields.textContent = "";
    for (const f of KIND_FIELDS[kindSel.value as EtfKindName]) {
      const inp = document.createElement("input");
      inp.type = "number";
      inp.placeholder = f;
      inp.dataset.field = f;
      fields.appendChild(inp);
    }
  };
  kindSel.onchange = renderFields;
  renderFields();
  controls.appendChild(fields);

  const addBtn = el("button");
  addBtn.textContent = "add";
  addBtn.onclick = () => {
    const params: Record<string, number> = {};
    for (const inp of fields.querySelectorAll("input")) {
      const v = parseFloat(inp.value);
      if (Number.isFinite(v)) params[inp.dataset.field!] = v;
    }
    void grid.add(kindSel.value as EtfKindName, params);
  };
  controls.appendChild(addBtn);

  const delBtn = el("button");
  delBtn.textContent = "delete";
  delBtn.onclick = () => {
    const sel = grid.selected()[0];
    if (!sel) return;
    const [r, c] = sel.split(",").map(Number);
    void grid.remove(r, c);
  };
  controls.appendChild(delBtn);
  block.appendChild(controls);

  const table = el("div", "grid");
  table.style.gridTemplateColumns = `repeat(${grid.size}, 1fr)`;
  const buttons: HTMLButtonElement[] = [];
  for (let r = 0; r < grid.size; r++) {
    for (let c = 0; c < grid.size; c++) {
      const b = document.createElement("button");
      b.onclick = () => {
        grid.click(r, c);
        paint();
      };
      table.appendChild(b);
      buttons.push(b);
    }
  }
  block.appendChild(table);

  const paint = () => {
    const sel = new Set(grid.selected());
    for (let r = 0; r < grid.size; r++) {
      for (let c = 0; c < grid.size; c++) {
        const b = buttons[r * grid.size + c];
        b.textContent = grid.label(r, c);
        const err = grid.error(r, c);
        b.title = err;
        b.classList.toggle("error", err !== "");
        b.classList.toggle("selected", sel.has(CouplingGrid.key(r, c)));
      }
    }
  };
  grid.onCells = paint;
  paint();
  return block;
}

// snapshots

function snapshotBar(session: PanelSession): HTMLElement {
  const bar = el("div", "snapshots");
  const name = document.createElement("input");
  name.placeholder = "snapshot name";
  const scope = document.createElement("select");
  for (const s of ["instrument", ...session.model.networks().map((n) => `network ${n}`)]) {
    const o = document.createElement("option");
    o.value = s;
    o.textContent = s;
    scope.appendChild(o);
  }
  const save = el("button");
  save.textContent = "save";
  save.onclick = () => {
    if (!name.value) return;
    const [sc, target] = scope.value.split(" ");
    void session.snapshots.save(name.value, sc, target).then(renderNames);
  };

  const recall = document.createElement("select");
  const renderNames = () => {
    recall.textContent = "";
    for (const n of session.snapshots.names) {
      const o = document.createElement("option");
      o.value = n;
      o.textContent = n;
      recall.appendChild(o);
    }
  };
  const load = el("button");
  load.textContent = "recall";
  load.onclick = () => {
    const n = recall.value || name.value;
    if (n) void session.snapshots.load(n);
  };

  const toast = el("div", "toast");
  session.snapshots.onToast = (text) => {
    toast.textContent = text;
    toast.classList.add("shown");
    setTimeout(() => toast.classList.remove("shown"), 6000);
  };

  bar.append(name, scope, save, recall, load, toast);
  return bar;
}

// meters

function meterBlock(session: PanelSession, net: string): HTMLElement {
  const block = el("div", "meters");
  const toggle = document.createElement("input");
  toggle.type = "checkbox";
  toggle.onchange = () => {
    if (toggle.checked) void session.subscribeMeters(30);
    else void session.unsubscribeMeters();
  };
  const label = el("label");
  label.append(toggle, document.createTextNode(" meters"));
  block.appendChild(label);

  const strip = el("div", "strip");
  const bars: HTMLElement[] = [];
  for (let k = 0; k < session.model.modes(net); k++) {
    const bar = el("div", "bar");
    strip.appendChild(bar);
    bars.push(bar);
  }
  block.appendChild(strip);

  const prior = session.meters.onFrame;
  session.meters.onFrame = () => {
    prior();
    for (let k = 0; k < bars.length; k++) {
      const h = session.meters.bars.get(`net.${net}.node.${k}.energy`) ?? 0;
      bars[k].style.height = `${Math.round(h * 100)}%`;
    }
  };
  return block;
}

function el(tag: string, cls = ""): HTMLElement {
  const e = document.createElement(tag);
  if (cls) e.className = cls;
  return e;
}
