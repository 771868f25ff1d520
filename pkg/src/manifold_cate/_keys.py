"""Counter-based split randomness for data-independent partitions.

Every node of a partition tree owns a 64-bit key.  The key of the root is a
function of ``(seed, arm, tree)`` only and child keys are derived from the
parent key, so the split drawn at a node never depends on which data happen
to reach it.  The compiled kernel mirrors these constants bit for bit.
"""

MASK64 = (1 << 64) - 1

GOLDEN = 0x9E3779B97F4A7C15
MUL1 = 0xBF58476D1CE4E5B9
MUL2 = 0x94D049BB133111EB

LEFT_SALT = 0x8CB92BA72F3D8DD7
RIGHT_SALT = 0x632BE59BD9B4E019
COORD_SALT = 0xD6E8FEB86659FD93
POS_SALT = 0xA0761D6478BD642F

TWO_POW_M53 = 2.0 ** -53


def mix64(z):
    """splitmix64 finalizer; a bijection on 64-bit integers."""
    z = (z + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * MUL1) & MASK64
    z = ((z ^ (z >> 27)) * MUL2) & MASK64
    return z ^ (z >> 31)


def root_key(seed, arm, tree):
    return mix64(mix64(mix64(seed & MASK64) ^ (arm & MASK64)) ^ (tree & MASK64))


def child_key(key, side):
    return mix64(key ^ (RIGHT_SALT if side else LEFT_SALT))


def split_coordinate(key, d):
    return mix64(key ^ COORD_SALT) % d


def split_fraction(key):
    """Uniform draw in [0, 1) with 53 bits of resolution."""
    return (mix64(key ^ POS_SALT) >> 11) * TWO_POW_M53
