"""Shared enums used across the simulator."""

from enum import Enum


class Proto(str, Enum):
    UDP = "UDP"
    ICMP = "ICMP"
    TCPLIKE = "TCPLIKE"


class AttackKind(str, Enum):
    UdpFlood = "UdpFlood"
    IcmpFlood = "IcmpFlood"
    Smurf = "Smurf"
    Fraggle = "Fraggle"
    PingOfDeath = "PingOfDeath"
    Land = "Land"
    Shrew = "Shrew"
    RoQ = "RoQ"


class NodeKind(str, Enum):
    HOST = "host"
    ROUTER = "router"
    NE = "ne"
