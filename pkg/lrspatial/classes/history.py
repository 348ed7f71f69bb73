from typing import Dict, List, Optional

from pydantic import Field
from rich.console import Group
from rich.panel import Panel
from rich.pretty import pretty_repr
from rich.table import Table
from rich.tree import Tree

from lrspatial.constants import boundary_status, converged_status, not_run_status
from lrspatial.logger import get_scope_handler
from lrspatial.utils.pydantic_utils import ArbitraryModel


class OptimizerStart(ArbitraryModel):
    """One optimizer run from one starting point."""

    label: str
    start: Dict[str, float] = Field(description="Natural-scale starting parameters.")
    end: Dict[str, float] = Field(default_factory=dict)
    loglik: Optional[float] = None
    nfev: int = 0
    status: str = not_run_status
    message: str = ""

    @property
    def rich_group(self) -> Group:
        table = Table(show_lines=False)
        table.add_column("Parameter", justify="right", no_wrap=True)
        table.add_column("Start")
        table.add_column("End")
        for name, value in self.start.items():
            end = self.end.get(name)
            table.add_row(name, f"{value:.6g}", "" if end is None else f"{end:.6g}")
        return Group(
            Panel(table, title="Parameters", style="on #F0F8FF"),
            Panel(
                pretty_repr(
                    {"loglik": self.loglik, "nfev": self.nfev, "message": self.message}
                ),
                title=f"Outcome: {self.status}",
                style="on #F0FFF0",
            ),
        )


class FitCall(ArbitraryModel):
    """Record of every optimizer start made by one restricted-likelihood fit."""

    kind: str
    n: int
    L: int
    starts: List[OptimizerStart] = Field(default_factory=list)
    selected: Optional[int] = None

    @property
    def scope(self) -> str:
        return f"fit-{id(self)}"

    @property
    def logs(self) -> List[str]:
        """Log lines emitted while this fit was running."""
        scoped_logs = get_scope_handler().get_logs(self.scope)
        return [log.getMessage() for log in scoped_logs]

    @property
    def status(self) -> str:
        if self.selected is None:
            return not_run_status
        return self.starts[self.selected].status

    @property
    def converged(self) -> bool:
        return self.status in (converged_status, boundary_status)

    @property
    def total_nfev(self) -> int:
        return sum(start.nfev for start in self.starts)

    @property
    def tree(self) -> Tree:
        tree = Tree(f"{self.kind} fit (n={self.n}, L={self.L})")
        for i, start in enumerate(self.starts):
            marker = " (selected)" if i == self.selected else ""
            tree.add(Panel(start.rich_group, title=f"Start {i}: {start.label}{marker}"))
        return tree
