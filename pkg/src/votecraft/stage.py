"""
Stage in a votecraft pipeline board.

A stage is an executable edge: it reads one or more source slots, calls its comp
with their values (in ``sources`` order) and writes the result into its target
slot. A stage can repeat its comp and keep the median wall time, which is how the
benchmark times keypoint voting and pose fitting.
"""

import statistics
import time
from typing import Any, Callable, List, Optional, Sequence

from .errors import PipelineError


class Stage:
    """
    Executable edge between pipeline slots.

    Parameters
    ----------
    name : str
        Unique stage name within a board, e.g. ``"vote"``.
    sources : Sequence[str]
        Slots whose values are passed to ``comp`` positionally.
    target : str
        Slot that receives the result.
    comp : Callable, optional
        The computation; may be set later with :meth:`set_comp`.
    repetitions : int, optional
        Times ``comp`` is run per execution; the reported time is the median.
    exclusive : bool, optional
        Whether the board runs this stage under its timing lock, so no other
        exclusive stage runs concurrently while it is being timed.
    """

    def __init__(self,
                 name: str,
                 sources: Sequence[str],
                 target: str,
                 comp: Optional[Callable[..., Any]] = None,
                 repetitions: int = 1,
                 exclusive: bool = False):
        if repetitions < 1:
            raise PipelineError(f"Stage '{name}' needs at least one repetition, got {repetitions}")
        if target in sources:
            raise PipelineError(f"Stage '{name}' cannot write its own source slot '{target}'")
        self.name = name
        self.sources: List[str] = list(sources)
        self.target = target
        self.comp = comp
        self.repetitions = repetitions
        self.exclusive = exclusive
        self.last_time_ns: Optional[int] = None

    @property
    def has_comp(self) -> bool:
        return self.comp is not None

    def set_comp(self, comp: Callable[..., Any]) -> None:
        self.comp = comp

    def execute(self, *inputs: Any) -> Any:
        """
        Run the comp ``repetitions`` times on the same inputs.

        Returns
        -------
        Any
            The result of the last repetition. The median wall time in nanoseconds
            is left in :attr:`last_time_ns`.

        Raises
        ------
        PipelineError
            If no comp is set or the input count does not match ``sources``.
        """
        if not self.has_comp:
            raise PipelineError(f"Cannot execute stage '{self.name}': no comp function defined")
        if len(inputs) != len(self.sources):
            raise PipelineError(
                f"Stage '{self.name}' expects {len(self.sources)} inputs, got {len(inputs)}"
            )

        times = []
        result = None
        for _ in range(self.repetitions):
            start = time.perf_counter_ns()
            result = self.comp(*inputs)
            # clock granularity can report 0 for tiny comps
            times.append(max(time.perf_counter_ns() - start, 1))
        self.last_time_ns = int(statistics.median_low(times))
        return result

    def __str__(self) -> str:
        status = "executable" if self.has_comp else "empty"
        return f"Stage({self.name}: {', '.join(self.sources)} → {self.target}, {status})"
