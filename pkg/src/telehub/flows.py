"""Bundled expected-flow tables.

Keyed by test_id; each value is a procedural-flow payload. The mock gen
agent answers from this table, and the packaged workflow ships "reg-basic",
the initial 5G SA registration exchange as seen from the gNB.
"""

from __future__ import annotations


def _step(no: int, protocol: str, name: str, direction: str, description: str) -> dict:
    return {
        "step_no": no,
        "protocol": protocol,
        "name": name,
        "direction": direction,
        "description": description,
    }


FLOW_TABLE: dict[str, dict] = {
    "reg-basic": {
        "test_id": "reg-basic",
        "steps": [
            _step(1, "RRC", "RRCSetupRequest", "UL", "UE requests an RRC connection"),
            _step(2, "RRC", "RRCSetup", "DL", "gNB configures SRB1"),
            _step(3, "RRC", "RRCSetupComplete", "UL", "UE confirms setup, carries the NAS registration"),
            _step(4, "NAS", "RegistrationRequest", "UL", "UE asks to register with the core"),
            _step(5, "NAS", "AuthenticationRequest", "DL", "network challenges the UE"),
            _step(6, "NAS", "AuthenticationResponse", "UL", "UE answers the challenge"),
            _step(7, "NAS", "SecurityModeCommand", "DL", "network selects NAS security algorithms"),
            _step(8, "NAS", "SecurityModeComplete", "UL", "UE activates NAS security"),
            _step(9, "NAS", "RegistrationAccept", "DL", "core accepts the registration"),
            _step(10, "NAS", "RegistrationComplete", "UL", "UE acknowledges acceptance"),
        ],
    },
}
