import enum
from typing import Tuple


class DamageState(enum.IntEnum):
    """Five ordinal damage states of the residential wind damage scale"""

    DS_0 = 0
    DS_1 = 1
    DS_2 = 2
    DS_3 = 3
    DS_4 = 4

    @property
    def label(self) -> str:
        return f"DS-{self.value}"

    @classmethod
    def parse(cls, value) -> "DamageState":
        if isinstance(value, str) and value.upper().startswith("DS-"):
            value = value[3:]
        return cls(int(value))


NUM_DAMAGE_STATES = len(DamageState)


class ViewRole(str, enum.Enum):
    GROUND_1 = "ground-1"
    GROUND_2 = "ground-2"
    GROUND_3 = "ground-3"
    GROUND_4 = "ground-4"
    OVERHEAD = "overhead"

    @property
    def is_ground(self) -> bool:
        return self is not ViewRole.OVERHEAD


# Canonical order; early-concat fusion stacks channel blocks in this order
VIEW_ROLES: Tuple[ViewRole, ...] = tuple(ViewRole)
GROUND_ROLES: Tuple[ViewRole, ...] = tuple(r for r in ViewRole if r.is_ground)


class FusionMode(str, enum.Enum):
    EARLY_CONCAT = "early-concat"
    VIEW_MAX = "view-max"
