from threatmesh.contract import ChaincodeStub, Contract
from threatmesh.errors import AccessDenied, BadSignature, ContractError
from threatmesh.identity.ca import Crl, Role, verify_crl

CRL_PREFIX = "msp/crl/"


def crl_key(ca_name: str) -> str:
    return CRL_PREFIX + ca_name


class MspConfigContract(Contract[None]):
    """
    Distributes CRLs through ordered transactions so every peer switches to a new CRL at the same
    block. Peers apply committed ``msp/crl/<ca>`` writes to their membership service.
    """

    name = "mspconfig"

    def operations(self) -> tuple[str, ...]:
        return ("update_crl",)

    def check_args(self, operation: str, args: tuple) -> None:
        if len(args) != 1:
            raise ContractError(f"{operation} takes 1 argument, got {len(args)}")

    def update_crl(self, stub: ChaincodeStub, crl_bytes: bytes) -> bytes:
        try:
            crl = Crl.from_bytes(crl_bytes)
        except ValueError as e:
            raise ContractError(f"malformed CRL: {e}") from e
        root = stub.msp.roots.get(crl.issuer) if stub.msp else None
        if root is None:
            raise ContractError(f"unknown CA {crl.issuer!r}")
        if stub.creator.role != Role.ADMIN or stub.creator.organization != root.organization:
            raise AccessDenied(f"only an admin of {root.organization} may update {crl.issuer}'s CRL")
        if not verify_crl(crl, root):
            raise BadSignature(f"CRL is not signed by {crl.issuer}")
        current = stub.get_state(crl_key(crl.issuer))
        if current is not None and not Crl.from_bytes(current).revoked_serials <= crl.revoked_serials:
            raise ContractError("a CRL may only grow")
        stub.put_state(crl_key(crl.issuer), crl.to_bytes())
        return b""
