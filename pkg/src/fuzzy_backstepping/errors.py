"""Exception types raised by the simulation and design tools."""


class ConfigError(ValueError):
    """Invalid parameters, scenario entries or initial conditions."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else [message]


class BarrierViolation(RuntimeError):
    """A tracking coordinate reached its barrier, ``k_b**2 - z**2 <= eps``.

    ``index`` is 1-based (``z_1`` is the output tracking error).
    """

    def __init__(self, index, z, kb, time=None, trajectory=None):
        self.index = index
        self.z = z
        self.kb = kb
        self.time = time
        self.trajectory = trajectory
        super().__init__(index, z, kb)

    def __str__(self):
        where = "" if self.time is None else f" at t={self.time:.6g}"
        return f"barrier violated on z{self.index}{where}: |z|={abs(self.z):.6g} >= k_b={self.kb:.6g}"


class SimulationDiverged(RuntimeError):
    """A state derivative or state became non-finite.  ``index`` is 1-based."""

    def __init__(self, index, time=None, trajectory=None):
        self.index = index
        self.time = time
        self.trajectory = trajectory
        super().__init__(index)

    def __str__(self):
        where = "" if self.time is None else f" at t={self.time:.6g}"
        which = "" if self.index is None else f" in component {self.index}"
        return f"non-finite value{which}{where}"


class EmptyFeasibleSet(RuntimeError):
    """No gain candidate satisfied every feasibility constraint."""

    def __init__(self, message, tightest=None, log=None):
        super().__init__(message)
        self.tightest = tightest
        self.log = log or []
