"""Piecewise-linear boundary-condition schedules.

A schedule maps time to a prescribed boundary velocity vector for one
Dirichlet patch. Between breakpoints the value is linear in t, outside
the breakpoint range it is held constant at the nearest endpoint. The
time derivative (needed by the pressure Poisson boundary condition) is
the slope of the active segment, taken from the right at breakpoints.
"""

import numpy as np


class BCSchedule:
    """Piecewise-linear t -> (vx, vy) schedule for one boundary patch.

    breakpoints: sequence of (t, vx, vy) with strictly increasing t.
    """

    def __init__(self, breakpoints):
        pts = np.asarray(breakpoints, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("breakpoints must be a (m, 3) array of (t, vx, vy)")
        if pts.shape[0] > 1 and not np.all(np.diff(pts[:, 0]) > 0.0):
            raise ValueError("breakpoint times must be strictly increasing")
        self.times = pts[:, 0].copy()
        self.values = pts[:, 1:].copy()

    @classmethod
    def constant(cls, vx, vy):
        return cls([(0.0, vx, vy)])

    def __call__(self, t):
        """Boundary velocity vector at time t, shape (2,)."""
        vx = np.interp(t, self.times, self.values[:, 0])
        vy = np.interp(t, self.times, self.values[:, 1])
        return np.array([vx, vy])

    def derivative(self, t):
        """Right-sided slope d/dt of the schedule at time t, shape (2,)."""
        if self.times.size == 1:
            return np.zeros(2)
        # segment with times[k] <= t < times[k+1]; constant outside the range
        if t < self.times[0] or t >= self.times[-1]:
            return np.zeros(2)
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), self.times.size - 2)
        dt_seg = self.times[k + 1] - self.times[k]
        return (self.values[k + 1] - self.values[k]) / dt_seg

    def covers(self, t_end):
        """A schedule always extrapolates by holding endpoints, so any
        horizon is covered; kept for config validation symmetry."""
        return np.isfinite(t_end)

    def to_list(self):
        return [[float(t), float(v[0]), float(v[1])]
                for t, v in zip(self.times, self.values)]
