"""Static signature rules for malformed packets."""

from typing import Optional

from .kinds import AttackKind

MAX_IP_SIZE = 65535
SIGNATURES = (AttackKind.PingOfDeath, AttackKind.Land)


def signature_match(packet) -> Optional[AttackKind]:
    if packet.size > MAX_IP_SIZE:
        return AttackKind.PingOfDeath
    if packet.effective_src == packet.dst:
        return AttackKind.Land
    return None
