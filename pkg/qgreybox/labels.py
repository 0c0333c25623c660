import enum


from .exceptions import ConfigError


class NoiseKind(enum.Enum):
    RTN = "RTN"
    OU = "OU"


class Gate(enum.Enum):
    I = "I"  # noqa: E741
    RX90 = "Rx90"
    RY90 = "Ry90"
    RX180 = "Rx180"
    RY180 = "Ry180"
    H = "H"


DEFAULT_GATES = (Gate.I, Gate.RX90, Gate.RY90, Gate.RX180, Gate.RY180, Gate.H)


def get_noise_kind(string):
    for kind in NoiseKind:
        if string.upper() == kind.value:
            return kind

    raise ConfigError("Not a valid noise kind: {}".format(string))


def get_gate(string):
    if isinstance(string, Gate):
        return string
    for gate in Gate:
        if string == gate.value or string == gate.name:
            return gate

    raise ConfigError("Not a valid gate label: {}".format(string))
