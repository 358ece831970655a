"""Key material, signatures and sealed boxes.

Signatures are Ed25519. Sealing (transport envelopes, wrapped content keys) is ephemeral X25519
agreement, HKDF-SHA256 and AES-256-GCM.
"""

from typing import Protocol

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from threatmesh.errors import IntegrityMismatch
from threatmesh.netsim.rng import SystemEntropy

KEY_SIZE = 32
NONCE_SIZE = 12

_RAW = serialization.Encoding.Raw
_RAW_PUBLIC = serialization.PublicFormat.Raw
_RAW_PRIVATE = serialization.PrivateFormat.Raw


class Entropy(Protocol):
    def token_bytes(self, n: int) -> bytes: ...


class KeyPair:
    """An actor's Ed25519 signing key and X25519 agreement key."""

    def __init__(self, signing: Ed25519PrivateKey, agreement: X25519PrivateKey):
        self.signing = signing
        self.agreement = agreement
        self.public_key = signing.public_key().public_bytes(_RAW, _RAW_PUBLIC)
        self.agreement_key = agreement.public_key().public_bytes(_RAW, _RAW_PUBLIC)

    @classmethod
    def generate(cls, entropy: Entropy = None) -> "KeyPair":
        entropy = entropy or SystemEntropy()
        return cls(
            Ed25519PrivateKey.from_private_bytes(entropy.token_bytes(KEY_SIZE)),
            X25519PrivateKey.from_private_bytes(entropy.token_bytes(KEY_SIZE)),
        )

    @classmethod
    def from_private_bytes(cls, signing: bytes, agreement: bytes) -> "KeyPair":
        return cls(Ed25519PrivateKey.from_private_bytes(signing), X25519PrivateKey.from_private_bytes(agreement))

    def private_bytes(self) -> tuple[bytes, bytes]:
        none = serialization.NoEncryption()
        return (
            self.signing.private_bytes(_RAW, _RAW_PRIVATE, none),
            self.agreement.private_bytes(_RAW, _RAW_PRIVATE, none),
        )

    def sign(self, message: bytes) -> bytes:
        return sign(self.signing, message)


def sign(private_key: Ed25519PrivateKey, message: bytes) -> bytes:
    return private_key.sign(message)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff ``signature`` is a valid Ed25519 signature of ``message`` under ``public_key``."""
    try:
        Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


def _derive_key(shared: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=KEY_SIZE, salt=None, info=info).derive(shared)


def seal(recipient_agreement_key: bytes, plaintext: bytes, context: bytes, entropy: Entropy = None) -> bytes:
    """
    Encrypts ``plaintext`` so that only the holder of the matching X25519 private key can open it.

    Layout: ephemeral public key (32) | nonce (12) | AES-GCM ciphertext and tag.
    ``context`` is bound both into the key derivation and as associated data.
    """
    entropy = entropy or SystemEntropy()
    ephemeral = X25519PrivateKey.from_private_bytes(entropy.token_bytes(KEY_SIZE))
    shared = ephemeral.exchange(X25519PublicKey.from_public_bytes(recipient_agreement_key))
    ephemeral_public = ephemeral.public_key().public_bytes(_RAW, _RAW_PUBLIC)
    key = _derive_key(shared, b"threatmesh/seal/" + context)
    nonce = entropy.token_bytes(NONCE_SIZE)
    return ephemeral_public + nonce + AESGCM(key).encrypt(nonce, plaintext, context)


def open_sealed(agreement: X25519PrivateKey, blob: bytes, context: bytes) -> bytes:
    """Opens a :func:`seal` box. Raises ``IntegrityMismatch`` on a wrong key or altered bytes."""
    if len(blob) < KEY_SIZE + NONCE_SIZE + 16:
        raise IntegrityMismatch(f"sealed box too short ({len(blob)} bytes)")
    ephemeral_public = blob[:KEY_SIZE]
    nonce = blob[KEY_SIZE:KEY_SIZE + NONCE_SIZE]
    try:
        shared = agreement.exchange(X25519PublicKey.from_public_bytes(ephemeral_public))
        key = _derive_key(shared, b"threatmesh/seal/" + context)
        return AESGCM(key).decrypt(nonce, blob[KEY_SIZE + NONCE_SIZE:], context)
    except (InvalidTag, ValueError) as e:
        raise IntegrityMismatch("sealed box failed authentication") from e
