"""Exception hierarchy shared by all modules."""


class RegionEditError(Exception):
    """Base class for every error raised by this package."""


class PlanError(RegionEditError, ValueError):
    pass


class TagStructureError(PlanError):
    """Missing, duplicated or misordered think/global/region tags."""


class RegionPayloadError(PlanError):
    """Region block is not a JSON list of well-formed region objects."""


class BboxError(PlanError):
    """Bounding box is degenerate after clamping."""


class GeometryError(RegionEditError, ValueError):
    pass


class DegenerateBoxError(GeometryError):
    """A perturbed box collapsed to zero area."""


class LayoutError(RegionEditError, ValueError):
    pass


class MaskError(RegionEditError, ValueError):
    pass


class ShapeError(RegionEditError, ValueError):
    pass


class DomainError(RegionEditError, ValueError):
    pass


class EmptyInputError(RegionEditError, ValueError):
    pass
