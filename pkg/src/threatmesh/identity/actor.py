from typing import NamedTuple

from threatmesh.identity.ca import Certificate, Role
from threatmesh.identity.did import did_for_key
from threatmesh.identity.keys import KeyPair


class Identity(NamedTuple):
    """A named actor: its certificate and the key pair the certificate binds."""

    name: str
    cert: Certificate
    keys: KeyPair

    @property
    def organization(self) -> str:
        return self.cert.organization

    @property
    def role(self) -> Role:
        return self.cert.role

    @property
    def did(self) -> str:
        return did_for_key(self.cert.public_key)

    def sign(self, message: bytes) -> bytes:
        return self.keys.sign(message)
