"""Interchange emitters: explicit-state dumps (lossless), DOT graphs, checker dialects.

The explicit format round-trips models exactly. The external-checker emitters
are best-effort text for manual cross-checks and make no bit-exactness claims
against any particular tool version.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ExplicitModel, ModelBuilder

FORMAT_HEADER = "gridgames-explicit 1"


class ExportError(ValueError):
    module = "export"


def dumps_explicit(model: ExplicitModel) -> str:
    """Serialize a model to the explicit line format (deterministic)."""
    lines = [FORMAT_HEADER, f"kind {model.kind}", f"states {model.num_states}", f"initial {model.initial}"]
    for s in range(model.num_states):
        labels = []
        if model.goal[s]:
            labels.append("goal")
        if model.bad[s]:
            labels.append("bad")
        obs = str(int(model.obs_id[s])) if model.obs_id is not None else "-"
        lines.append(
            f"state {s} player={int(model.player[s])} labels={','.join(labels) or '-'} "
            f"obs={obs} name={json.dumps(model.state_name[s])}"
        )
    if model.obs_name is not None:
        for i, name in enumerate(model.obs_name):
            lines.append(f"obs {i} name={json.dumps(name)}")
    for s in range(model.num_states):
        seen_actions = set()
        for c in range(int(model.choice_start[s]), int(model.choice_start[s + 1])):
            action = model.choice_action[c]
            if action in seen_actions:
                raise ExportError(f"state {s} repeats action {action!r}; the row format cannot express that")
            seen_actions.add(action)
            for t, p in model.choice_transitions(c):
                lines.append(f"trans {s} {action} {t} {p!r}")
    return "\n".join(lines) + "\n"


def emit_explicit(model: ExplicitModel, target: str | Path) -> Path:
    path = Path(target)
    path.write_text(dumps_explicit(model))
    return path


def parse_explicit(text: str) -> ExplicitModel:
    """Parse the explicit line format back into a model."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != FORMAT_HEADER:
        raise ExportError(f"not an explicit model dump (expected header {FORMAT_HEADER!r})")
    kind = None
    initial = None
    n_states = None
    states: dict[int, dict] = {}
    obs_names: dict[int, str] = {}
    rows: list[tuple[int, str, int, float]] = []
    for ln in lines[1:]:
        parts = ln.split(" ", 1)
        tag = parts[0]
        rest = parts[1] if len(parts) > 1 else ""
        if tag == "kind":
            kind = rest.strip()
        elif tag == "states":
            n_states = int(rest)
        elif tag == "initial":
            initial = int(rest)
        elif tag == "state":
            sid_s, fields = rest.split(" ", 1)
            sid = int(sid_s)
            info: dict = {}
            for key in ("player", "labels", "obs"):
                marker = f"{key}="
                start = fields.index(marker) + len(marker)
                end = fields.find(" ", start)
                info[key] = fields[start:end if end >= 0 else len(fields)]
            name_start = fields.index("name=") + len("name=")
            info["name"] = json.loads(fields[name_start:])
            states[sid] = info
        elif tag == "obs":
            oid_s, fields = rest.split(" ", 1)
            name_start = fields.index("name=") + len("name=")
            obs_names[int(oid_s)] = json.loads(fields[name_start:])
        elif tag == "trans":
            src_s, action, tgt_s, prob_s = rest.split(" ")
            rows.append((int(src_s), action, int(tgt_s), float(prob_s)))
        else:
            raise ExportError(f"unknown line tag {tag!r}")
    if kind is None or initial is None or n_states is None:
        raise ExportError("dump is missing kind/states/initial headers")
    if len(states) != n_states:
        raise ExportError(f"dump declares {n_states} states but defines {len(states)}")

    builder = ModelBuilder(kind)
    for sid in range(n_states):
        info = states[sid]
        labels = info["labels"].split(",") if info["labels"] != "-" else []
        obs = None if info["obs"] == "-" else int(info["obs"])
        builder.add_state(
            info["name"],
            player=int(info["player"]),
            goal="goal" in labels,
            bad="bad" in labels,
            obs=obs,
            obs_name=obs_names.get(obs) if obs is not None else None,
        )
    # group consecutive rows of one (state, action) into a choice
    i = 0
    while i < len(rows):
        src, action, _, _ = rows[i]
        j = i
        trans = []
        while j < len(rows) and rows[j][0] == src and rows[j][1] == action:
            trans.append((rows[j][2], rows[j][3]))
            j += 1
        builder.add_choice(src, action, trans)
        i = j
    return builder.finish(initial)


def load_explicit(path: str | Path) -> ExplicitModel:
    return parse_explicit(Path(path).read_text())


def emit_dot(model: ExplicitModel, max_states: int = 5000) -> str:
    """DOT graph with player shapes and label colors; refuses oversized models."""
    if model.num_states > max_states:
        raise ExportError(f"model has {model.num_states} states, above the DOT limit {max_states}")
    out = ["digraph model {", "  rankdir=LR;"]
    for s in range(model.num_states):
        shape = "diamond" if model.player[s] == 2 else "box"
        attrs = [f'shape={shape}', f'label="{s}"']
        if model.goal[s]:
            attrs.append('color=green')
            attrs.append('goal=true')
        if model.bad[s]:
            attrs.append('color=red')
            attrs.append('bad=true')
        if s == model.initial:
            attrs.append("penwidth=3")
        attrs.append(f'tooltip={json.dumps(model.state_name[s])}')
        out.append(f"  {s} [{','.join(attrs)}];")
    for s in range(model.num_states):
        for c in range(int(model.choice_start[s]), int(model.choice_start[s + 1])):
            action = model.choice_action[c]
            for t, p in model.choice_transitions(c):
                label = action if p == 1.0 else f"{action}:{p:g}"
                out.append(f'  {s} -> {t} [label="{label}"];')
    out.append("}")
    return "\n".join(out) + "\n"


def _world_decorated(model: ExplicitModel) -> bool:
    return bool(model.state_name) and model.state_name[0].startswith("r=(")


def _identifier(action: str) -> str:
    safe = "".join(ch if ch.isalnum() else "_" for ch in action)
    return f"a_{safe}"


def _visibility_comment(model: ExplicitModel) -> list[str]:
    from .abstraction import AbstractionMeta
    from .worldmodel import WorldModelMeta

    vis = None
    meta = model.meta
    if isinstance(meta, WorldModelMeta):
        vis = meta.vis
    elif isinstance(meta, AbstractionMeta):
        vis = meta.context.vis
    if vis is None:
        return []
    out = ["// visibility lookup (robot cell -> visible cells)"]
    for cell in sorted(vis.visible):
        cells = ",".join(f"({x},{y})" for x, y in sorted(vis.visible[cell]))
        out.append(f"// vis({cell[0]},{cell[1]}) = {{{cells}}}")
    return out


def emit_prism_pg(pg: ExplicitModel) -> str:
    """Two-player game in the external checker's dialect (best effort).

    One state variable with guarded commands; command labels partition the
    states between the two players.
    """
    if not (pg.player == 2).any():
        raise ExportError("unsupported model shape: no Player-2 states (emit a game, not an MDP)")
    if not _world_decorated(pg):
        raise ExportError("unsupported model shape: needs world tuple decorations in state names")
    n = pg.num_states
    out = ["// gridgames game export", "smg", ""]
    out.append("player p1 [p1act] endplayer")
    out.append("player p2 [p2act] endplayer")
    out.append("")
    out.extend(_visibility_comment(pg))
    out.append("")
    out.append("module game")
    out.append(f"  s : [0..{n - 1}] init {pg.initial};")
    for s in range(n):
        label = "p1act" if pg.player[s] == 1 else "p2act"
        for c in range(int(pg.choice_start[s]), int(pg.choice_start[s + 1])):
            terms = " + ".join(f"{p!r}:(s'={t})" for t, p in pg.choice_transitions(c))
            out.append(f"  [{label}] s={s} -> {terms}; // {pg.choice_action[c]}")
    out.append("endmodule")
    out.append("")
    goal = " | ".join(f"s={int(i)}" for i in np.flatnonzero(pg.goal)) or "false"
    bad = " | ".join(f"s={int(i)}" for i in np.flatnonzero(pg.bad)) or "false"
    out.append(f'label "goal" = {goal};')
    out.append(f'label "bad" = {bad};')
    return "\n".join(out) + "\n"


def emit_prism_pomdp(pomdp: ExplicitModel) -> str:
    """Partially observable model in the external checker's dialect (best effort)."""
    if pomdp.obs_id is None:
        raise ExportError("unsupported model shape: model has no observations")
    if not _world_decorated(pomdp):
        raise ExportError("unsupported model shape: needs world tuple decorations in state names")
    n = pomdp.num_states
    out = ["// gridgames pomdp export", "pomdp", "", "observables", "\to", "endobservables", ""]
    out.extend(_visibility_comment(pomdp))
    out.append("")
    out.append("module world")
    out.append(f"  s : [0..{n - 1}] init {pomdp.initial};")
    out.append(f"  o : [0..{len(pomdp.obs_name) - 1}] init {int(pomdp.obs_id[pomdp.initial])};")
    for s in range(n):
        for c in range(int(pomdp.choice_start[s]), int(pomdp.choice_start[s + 1])):
            action = _identifier(pomdp.choice_action[c])
            terms = " + ".join(
                f"{p!r}:(s'={t})&(o'={int(pomdp.obs_id[t])})" for t, p in pomdp.choice_transitions(c)
            )
            out.append(f"  [{action}] s={s} -> {terms};")
    out.append("endmodule")
    out.append("")
    goal = " | ".join(f"s={int(i)}" for i in np.flatnonzero(pomdp.goal)) or "false"
    bad = " | ".join(f"s={int(i)}" for i in np.flatnonzero(pomdp.bad)) or "false"
    out.append(f'label "goal" = {goal};')
    out.append(f'label "bad" = {bad};')
    return "\n".join(out) + "\n"
