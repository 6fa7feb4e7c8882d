"""
Pipeline board: named data slots joined by executable stages.

Slots are the nodes of a ``networkx.DiGraph`` and every stage adds an edge from
each of its sources to its target. Solving walks the slots in topological order
and runs the stage that produces each one.

The board lifecycle is tracked with flags:

1. has_model: all slots and stages have been added (:meth:`PipelineBoard.finalize_model`)
2. is_solvable: every input slot (no producing stage) holds a value
3. is_solved: :meth:`PipelineBoard.solve` has completed
"""

import logging
import threading
from contextlib import nullcontext
from typing import Any, Dict, List, Optional

import networkx as nx

from .errors import PipelineError
from .stage import Stage

logger = logging.getLogger(__name__)

_UNSET = object()


class PipelineBoard:
    """
    A small DAG of computations over named slots.

    Parameters
    ----------
    name : str, optional
        Board name, used in log messages.
    timing_lock : threading.Lock, optional
        Held while an ``exclusive`` stage runs, so that timed regions of boards
        solved on different threads never overlap.
    """

    def __init__(self, name: str = "pipeline", timing_lock: Optional[threading.Lock] = None):
        self.name = name
        self.graph = nx.DiGraph()
        self.slots: Dict[str, Any] = {}
        self.stages: Dict[str, Stage] = {}
        self._producers: Dict[str, str] = {}
        self.timing_lock = timing_lock
        self.timings_ns: Dict[str, int] = {}

        self.has_model = False
        self.is_solvable = False
        self.is_solved = False

    def add_slot(self, name: str, value: Any = _UNSET) -> None:
        """
        Add a data slot, optionally with an initial value.

        Raises
        ------
        PipelineError
            If the slot exists or the model is already finalized.
        """
        if self.has_model:
            raise PipelineError(f"Cannot add slot '{name}': board '{self.name}' is finalized")
        if name in self.slots:
            raise PipelineError(f"Slot with name '{name}' already exists")
        self.slots[name] = value
        self.graph.add_node(name)

    def add_stage(self, stage: Stage) -> None:
        """
        Add a stage between existing slots.

        Raises
        ------
        PipelineError
            If the name is taken, a slot is missing, or the target already has a
            producing stage.
        """
        if self.has_model:
            raise PipelineError(f"Cannot add stage '{stage.name}': board '{self.name}' is finalized")
        if stage.name in self.stages:
            raise PipelineError(f"Stage with name '{stage.name}' already exists")
        for slot in stage.sources + [stage.target]:
            if slot not in self.slots:
                raise PipelineError(f"Stage '{stage.name}' refers to unknown slot '{slot}'")
        if stage.target in self._producers:
            raise PipelineError(
                f"Slot '{stage.target}' is already produced by stage "
                f"'{self._producers[stage.target]}'"
            )
        self.stages[stage.name] = stage
        self._producers[stage.target] = stage.name
        for source in stage.sources:
            self.graph.add_edge(source, stage.target)

    def finalize_model(self) -> None:
        """
        Mark the structure complete and check it is acyclic.

        Raises
        ------
        PipelineError
            If the stages form a cycle.
        """
        if not nx.is_directed_acyclic_graph(self.graph):
            cycle = nx.find_cycle(self.graph)
            raise PipelineError(f"Board '{self.name}' has a cycle: {cycle}")
        self.has_model = True
        self._check_solvability()

    def input_slots(self) -> List[str]:
        """Slots without a producing stage."""
        return [name for name in self.slots if name not in self._producers]

    def _check_solvability(self) -> bool:
        self.is_solvable = self.has_model and all(
            self.slots[name] is not _UNSET for name in self.input_slots()
        )
        return self.is_solvable

    def set_slot(self, name: str, value: Any) -> None:
        """Set a slot's value; the board must be solved again afterwards."""
        if name not in self.slots:
            raise PipelineError(f"Slot '{name}' doesn't exist")
        self.slots[name] = value
        self.is_solved = False
        self._check_solvability()

    def get(self, name: str) -> Any:
        """
        Value of a slot.

        Raises
        ------
        PipelineError
            If the slot doesn't exist or has no value yet.
        """
        if name not in self.slots:
            raise PipelineError(f"Slot '{name}' doesn't exist")
        value = self.slots[name]
        if value is _UNSET:
            raise PipelineError(f"Slot '{name}' has no value; solve the board first")
        return value

    def execute_stage(self, name: str) -> Any:
        """Run one stage on the current source values and store its result."""
        stage = self.stages[name]
        inputs = [self.get(source) for source in stage.sources]
        lock = self.timing_lock if (stage.exclusive and self.timing_lock) else nullcontext()
        with lock:
            result = stage.execute(*inputs)
        self.slots[stage.target] = result
        self.timings_ns[name] = stage.last_time_ns
        logger.debug("%s: stage '%s' -> '%s' in %d ns",
                     self.name, name, stage.target, stage.last_time_ns)
        return result

    def solve(self) -> None:
        """
        Run every stage once, in topological order of their targets.

        Exceptions raised by a stage propagate unchanged; the board is then left
        unsolved.

        Raises
        ------
        PipelineError
            If the board is not finalized or an input slot is unset.
        """
        if not self.has_model:
            raise PipelineError("Cannot solve: board model is not finalized")
        if not self._check_solvability():
            missing = [n for n in self.input_slots() if self.slots[n] is _UNSET]
            raise PipelineError(f"Cannot solve: input slots {missing} have no value")

        self.is_solved = False
        for slot in nx.topological_sort(self.graph):
            if slot in self._producers:
                self.execute_stage(self._producers[slot])
        self.is_solved = True

    def __str__(self) -> str:
        status = []
        if self.has_model:
            status.append("modeled")
        if self.is_solvable:
            status.append("solvable")
        if self.is_solved:
            status.append("solved")
        status_str = ", ".join(status) if status else "empty"
        return (f"PipelineBoard({self.name}, {len(self.slots)} slots, "
                f"{len(self.stages)} stages, {status_str})")
