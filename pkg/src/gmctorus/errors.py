"""Exception types raised across the package."""


class GMCError(Exception):
    """Base class for all errors raised by gmctorus."""


class CertificationFailed(GMCError):
    def __init__(self, what, min_eigenvalue=None, detail=""):
        self.what = what
        self.min_eigenvalue = min_eigenvalue
        msg = f"certification failed: {what}"
        if min_eigenvalue is not None:
            msg += f" (min eigenvalue {min_eigenvalue:.3e})"
        if detail:
            msg += f"; {detail}"
        super().__init__(msg)


class QuadratureUnstable(GMCError):
    pass


class ScaleUnresolvable(GMCError):
    def __init__(self, j, M, what="level"):
        self.j = j
        self.M = M
        super().__init__(f"{what} {j} is not resolvable on a grid with M={M} points per axis")


class ClampBudgetExceeded(GMCError):
    def __init__(self, j, clamped, total):
        self.j = j
        self.clamped = clamped
        self.total = total
        super().__init__(
            f"level {j}: removed negative spectral mass {clamped:.3e} exceeds budget "
            f"(total {total:.3e}); grid resolution is insufficient"
        )


class GammaOutOfRange(GMCError):
    def __init__(self, gamma, d):
        self.gamma = gamma
        self.d = d
        super().__init__(
            f"gamma={gamma} outside the subcritical range (0, sqrt(2d)) = (0, {(2 * d) ** 0.5:.6f}) for d={d}"
            " (values within 1e-4 of sqrt(2d) count as critical)"
        )


class LevelMismatch(GMCError):
    pass


class InsufficientShells(GMCError):
    pass


class SchemaMismatch(GMCError):
    pass
