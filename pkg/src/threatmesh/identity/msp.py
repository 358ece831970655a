from typing import Iterable, Mapping, Optional

from absl import logging

from threatmesh.errors import IdentityRejected
from threatmesh.identity.ca import Certificate, Crl, RejectReason, Verdict, verify_cert, verify_crl


class Msp:
    """
    Membership service: every organization's CA root plus its current CRL.

    A CRL only replaces the current one if it verifies under the issuing root and is a superset of
    it, so revocation is monotone.
    """

    def __init__(self, roots: Iterable[Certificate], crls: Optional[Mapping[str, Crl]] = None):
        self.roots: dict[str, Certificate] = {root.subject: root for root in roots}
        self.crls: dict[str, Crl] = {}
        for crl in (crls or {}).values():
            self.update_crl(crl)

    def copy(self) -> "Msp":
        return Msp(self.roots.values(), self.crls)

    def org_of(self, ca_name: str) -> Optional[str]:
        root = self.roots.get(ca_name)
        return root.organization if root else None

    def root_for_org(self, organization: str) -> Optional[Certificate]:
        for root in self.roots.values():
            if root.organization == organization:
                return root
        return None

    def check_crl(self, crl: Crl) -> bool:
        """True iff ``crl`` is signed by a known root and does not shrink the current CRL."""
        root = self.roots.get(crl.issuer)
        if root is None or not verify_crl(crl, root):
            return False
        current = self.crls.get(crl.issuer)
        return current is None or current.revoked_serials <= crl.revoked_serials

    def update_crl(self, crl: Crl) -> bool:
        if not self.check_crl(crl):
            logging.warning("rejected CRL from %s", crl.issuer)
            return False
        self.crls[crl.issuer] = crl
        return True

    def verify(self, cert: Certificate, now: int) -> Verdict:
        root = self.roots.get(cert.issuer)
        if root is None or root.organization != cert.organization:
            return Verdict(False, RejectReason.UNKNOWN_ISSUER)
        return verify_cert(cert, root, self.crls.get(cert.issuer), now)

    def require(self, cert: Certificate, now: int) -> None:
        """Raises ``IdentityRejected`` unless ``cert`` is accepted at ``now``."""
        verdict = self.verify(cert, now)
        if not verdict.accepted:
            raise IdentityRejected(verdict.reason.value, cert.subject)
