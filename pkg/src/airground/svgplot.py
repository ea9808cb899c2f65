"""Route plots as standalone SVG documents.

Air-vehicle paths are red dashed polylines, ground-vehicle paths blue solid;
aerial task points are red hollow circles, ground points blue solid circles,
rendezvous sites black rings and the depot a black square.  Visited task
points fade to low opacity so mission progress reads at a glance.  Output is
deterministic: no timestamps or generator metadata.
"""

from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

from .errors import ContractViolationError
from .mdp import RECHARGE, UAV, UGV, VISIT, replay_actions
from .scenario import AERIAL, Scenario

UAV_COLOR = "#cc2222"
UGV_COLOR = "#2244cc"
VISITED_OPACITY = 0.25


class _Canvas:
    def __init__(self, area_side_m: float, size_px: int = 800, margin_px: int = 30):
        self.scale = (size_px - 2 * margin_px) / area_side_m
        self.margin = margin_px
        self.size = size_px
        self.area = area_side_m
        self.parts: List[str] = []

    def pt(self, x: float, y: float) -> Tuple[float, float]:
        return (
            self.margin + x * self.scale,
            self.margin + (self.area - y) * self.scale,
        )

    def polyline(self, xy: Sequence[Tuple[float, float]], color: str, dashed: bool, width=1.5):
        if len(xy) < 2:
            return
        pts = " ".join(f"{px:.2f},{py:.2f}" for px, py in (self.pt(x, y) for x, y in xy))
        dash = ' stroke-dasharray="7,5"' if dashed else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{dash}/>'
        )

    def circle(self, x, y, r, stroke, fill, opacity=1.0):
        px, py = self.pt(x, y)
        self.parts.append(
            f'<circle cx="{px:.2f}" cy="{py:.2f}" r="{r}" stroke="{stroke}" '
            f'fill="{fill}" opacity="{opacity:.2f}"/>'
        )

    def square(self, x, y, half, color):
        px, py = self.pt(x, y)
        self.parts.append(
            f'<rect x="{px - half:.2f}" y="{py - half:.2f}" width="{2 * half}" '
            f'height="{2 * half}" fill="{color}"/>'
        )

    def document(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{self.size}" height="{self.size}" '
            f'viewBox="0 0 {self.size} {self.size}">\n'
            f'<rect width="100%" height="100%" fill="white"/>\n{body}\n</svg>\n'
        )


def export_svg(
    scenario: Scenario,
    records: Sequence[dict] = (),
    size_px: int = 800,
    validate: bool = True,
    selection: str = "sortie",
    horizon: Optional[int] = None,
) -> str:
    """Render the scenario and an optional executed trace to an SVG string.

    With ``validate`` the trace is replayed first and an inconsistent trace
    is refused with the environment's diagnosis.
    """
    actions = [(r["action_kind"], int(r["action_node"])) for r in records]
    if actions and validate:
        try:
            replay_actions(scenario, scenario.team, actions, selection=selection, horizon=horizon)
        except ContractViolationError as err:
            raise ContractViolationError(f"trace does not replay legally: {err}") from err

    canvas = _Canvas(scenario.area_side_m, size_px)
    for i, j in scenario.road.edges:
        canvas.polyline(
            [tuple(scenario.road.nodes[i]), tuple(scenario.road.nodes[j])],
            color="#bbbbbb",
            dashed=False,
            width=1.0,
        )

    paths: Dict[Tuple[str, int], List[Tuple[float, float]]] = {}
    visited = set()
    rendezvous_nodes = []
    depot_xy = tuple(scenario.node_xy[scenario.depot_node])
    for rec in records:
        key = (rec["agent_kind"], int(rec["agent_id"]))
        paths.setdefault(key, [depot_xy]).append(
            tuple(scenario.node_xy[int(rec["action_node"])])
        )
        if rec["action_kind"] == VISIT:
            visited.add(int(rec["action_node"]))
        if rec["agent_kind"] == UGV and rec["action_kind"] == RECHARGE:
            rendezvous_nodes.append(int(rec["action_node"]))

    for key in sorted(paths):
        kind, _ = key
        canvas.polyline(
            paths[key],
            color=UAV_COLOR if kind == UAV else UGV_COLOR,
            dashed=kind == UAV,
        )
    for t in scenario.task_points:
        opacity = VISITED_OPACITY if t.id in visited else 1.0
        if t.kind == AERIAL:
            canvas.circle(t.x, t.y, 5, stroke=UAV_COLOR, fill="white", opacity=opacity)
        else:
            canvas.circle(t.x, t.y, 5, stroke=UGV_COLOR, fill=UGV_COLOR, opacity=opacity)
    for node in sorted(set(rendezvous_nodes)):
        x, y = scenario.node_xy[node]
        canvas.circle(x, y, 8, stroke="black", fill="none")
    canvas.square(*depot_xy, half=6, color="black")
    return canvas.document()
