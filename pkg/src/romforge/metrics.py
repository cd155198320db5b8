"""Error, energy, and performance measures for model comparison.

Errors are relative L2 norms over the domain,

    e(t) = ||u_ref(t) - u_cand(t)|| / ||u_ref(t)||,

undefined (NaN) wherever the reference norm vanishes; time averages
skip undefined entries. The same operation measures the basis
projection error (candidate = optimal reconstruction in the basis) and
the prediction error (candidate = reduced-model reconstruction).
Reduced trajectories are sampled at the snapshot times by linear
interpolation of the coefficients, exact whenever the reduced time
grid contains those times.

Time averages default to skipping the start-up transient
(DEFAULT_TRANSIENT_SKIP seconds) so settled behavior is reported
separately from the impulsive phase.
"""

import numpy as np

from .mesh_fields import inner_product, l2_norm
from .pod import reconstruct

#: seconds excluded from time-averaged error summaries by default
DEFAULT_TRANSIENT_SKIP = 2.0


def relative_l2_error(reference, candidate):
    """Relative L2 error, NaN for a zero-norm reference."""
    ref_norm = l2_norm(reference)
    if ref_norm == 0.0:
        return float("nan")
    return l2_norm(candidate - reference) / ref_norm


def kinetic_energy(field):
    """0.5 ||u||^2 over the domain."""
    return 0.5 * inner_product(field, field)


class ErrorReport:
    """Per-snapshot errors with NaN-aware time statistics."""

    def __init__(self, times, errors, label=""):
        self.times = np.asarray(times, dtype=np.float64)
        self.errors = np.asarray(errors, dtype=np.float64)
        self.label = label

    def mean(self, t_skip=0.0):
        """Average error over times > t_skip, ignoring undefined entries."""
        sel = (self.times > t_skip) & np.isfinite(self.errors)
        if not np.any(sel):
            raise ValueError(f"no defined errors after t = {t_skip:g}")
        return float(np.mean(self.errors[sel]))

    def max(self, t_skip=0.0):
        sel = (self.times > t_skip) & np.isfinite(self.errors)
        if not np.any(sel):
            raise ValueError(f"no defined errors after t = {t_skip:g}")
        return float(np.max(self.errors[sel]))


def kinetic_energy_error(times_ref, ref_fields, times_cand, cand_fields):
    """Relative kinetic-energy error series over aligned times."""
    times_ref = np.asarray(times_ref, dtype=np.float64)
    times_cand = np.asarray(times_cand, dtype=np.float64)
    if times_ref.shape != times_cand.shape or \
            not np.allclose(times_ref, times_cand, rtol=0.0, atol=1e-12):
        raise ValueError("time grids are not aligned")
    errs = np.empty(times_ref.size)
    for n, (rf, cf) in enumerate(zip(ref_fields, cand_fields)):
        e_ref = kinetic_energy(rf)
        errs[n] = float("nan") if e_ref == 0.0 \
            else abs(kinetic_energy(cf) - e_ref) / e_ref
    return ErrorReport(times_ref, errs, label="kinetic_energy")


def _sample_coefficients(traj_times, coeffs, eval_times):
    eval_times = np.asarray(eval_times, dtype=np.float64)
    if eval_times.min() < traj_times[0] - 1e-12 or \
            eval_times.max() > traj_times[-1] + 1e-12:
        raise ValueError("requested times outside the trajectory range")
    out = np.empty((eval_times.size, coeffs.shape[1]))
    for j in range(coeffs.shape[1]):
        out[:, j] = np.interp(eval_times, traj_times, coeffs[:, j])
    return out


def trajectory_errors(basis, trajectory, snapshots, pressure=False,
                      label=""):
    """Relative L2 errors of a reduced trajectory against snapshots.

    With pressure=True the pressure coefficients and snapshot pressure
    fields are compared (basis must then be the pressure basis).
    """
    coeffs = trajectory.b if pressure else trajectory.a
    if coeffs is None:
        raise ValueError("trajectory carries no pressure coefficients")
    refs = snapshots.pressure_fields if pressure \
        else snapshots.velocity_fields
    sampled = _sample_coefficients(trajectory.times, coeffs, snapshots.times)
    errs = np.empty(len(snapshots))
    for n, ref in enumerate(refs):
        errs[n] = relative_l2_error(ref, reconstruct(basis, sampled[n]))
    return ErrorReport(snapshots.times, errs, label=label)


def projection_errors(basis, snapshots, pressure=False, label=""):
    """Relative L2 errors of the optimal basis reconstruction of every
    snapshot (the floor below which prediction error cannot
    meaningfully fall)."""
    from .pod import project_snapshots
    traj = project_snapshots(basis, snapshots, pressure=pressure)
    return trajectory_errors(basis, traj, snapshots, pressure=pressure,
                             label=label or "projection")


def speedup(full_seconds, reduced_seconds):
    """Wall-time ratio full/reduced."""
    if reduced_seconds <= 0.0:
        raise ValueError("reduced wall time must be positive")
    return float(full_seconds) / float(reduced_seconds)


def timing_report(phase_timings):
    """Per-phase wall-clock table plus the offline/online speedup.

    phase_timings maps phase names to seconds; the speedup ratio is
    derived from the 'fom' and 'rom' entries when both are present.
    """
    out = {k: float(v) for k, v in phase_timings.items()}
    if "fom" in out and "rom" in out:
        out["speedup"] = speedup(out["fom"], out["rom"])
    return out
