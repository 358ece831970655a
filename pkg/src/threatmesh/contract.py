from typing import Generic, Mapping, Optional, TypeVar

from threatmesh.encoding import sha256
from threatmesh.errors import ContractError
from threatmesh.identity.ca import Certificate
from threatmesh.identity.did import did_for_key
from threatmesh.identity.msp import Msp
from threatmesh.ledger.channel import ChannelConfig
from threatmesh.ledger.records import KVRead, KVWrite, PrivateWriteHash, Proposal, ReadWriteSet
from threatmesh.ledger.state import PrivateStore, WorldState

ContractConstants = TypeVar("ContractConstants")


class ChaincodeStub:
    """
    A contract's view of the ledger during one simulated execution.

    Reads come from committed state and are recorded with their versions; writes are buffered into
    the read/write set and never touch state. Private values are kept apart from the read/write set,
    which carries only their hashes.
    """

    def __init__(self, channel: ChannelConfig, state: WorldState, private: PrivateStore, proposal: Proposal,
                 transient: Optional[Mapping[str, bytes]] = None, msp: Optional[Msp] = None, now: int = 0):
        self.channel = channel
        self.proposal = proposal
        self.msp = msp
        self.now = now
        self._state = state
        self._private = private
        self._transient = dict(transient or {})
        self._reads: dict[str, Optional[tuple[int, int]]] = {}
        self._writes: dict[str, Optional[bytes]] = {}
        self._private_writes: dict[tuple[str, str], Optional[bytes]] = {}

    @property
    def tx_id(self) -> str:
        return self.proposal.tx_id

    @property
    def creator(self) -> Certificate:
        return self.proposal.creator

    @property
    def creator_did(self) -> str:
        return did_for_key(self.proposal.creator.public_key)

    def get_state(self, key: str) -> Optional[bytes]:
        entry = self._state.get(key)
        self._reads.setdefault(key, entry.version if entry else None)
        return entry.value if entry else None

    def put_state(self, key: str, value: bytes) -> None:
        self._writes[key] = bytes(value)

    def del_state(self, key: str) -> None:
        self._writes[key] = None

    def get_transient(self, key: str) -> Optional[bytes]:
        return self._transient.get(key)

    def _collection(self, name: str):
        collection = self.channel.collection(name)
        if collection is None:
            raise ContractError(f"channel {self.channel.name} has no collection {name!r}")
        return collection

    def put_private_data(self, collection: str, key: str, value: bytes) -> None:
        self._collection(collection)
        self._private_writes[(collection, key)] = bytes(value)

    def del_private_data(self, collection: str, key: str) -> None:
        self._collection(collection)
        self._private_writes[(collection, key)] = None

    def get_private_data_hash(self, collection: str, key: str) -> Optional[bytes]:
        self._collection(collection)
        entry = self._private.hashes.get(collection, WorldState()).get(key)
        return entry.value if entry else None

    def rwset(self) -> ReadWriteSet:
        return ReadWriteSet(
            reads=tuple(KVRead(k, v) for k, v in sorted(self._reads.items())),
            writes=tuple(KVWrite(k, v) for k, v in sorted(self._writes.items())),
            private_writes=tuple(
                PrivateWriteHash(c, k, None if v is None else sha256(v))
                for (c, k), v in sorted(self._private_writes.items())
            ),
        )

    def private_values(self) -> dict[tuple[str, str], Optional[bytes]]:
        return dict(self._private_writes)


class Contract(Generic[ContractConstants]):
    """
    Abstract class for a contract installed on every peer.
    Generics:
    ContractConstants: The type of the contract constants.

    Operations are methods named in :meth:`operations`; each takes the stub followed by the
    proposal's byte-string arguments and returns a response. Execution must be deterministic.
    """

    name: str = ""

    def __init__(self, consts: ContractConstants = None):
        self.consts = consts

    def operations(self) -> tuple[str, ...]:
        """
        Returns the names of the operations this contract accepts.
        Returns: The operation names.
        """
        raise NotImplementedError("Abstract method")

    def check_args(self, operation: str, args: tuple) -> None:
        """
        Validates the argument count of an operation before it runs.
        Args:
            operation: The operation name.
            args: The proposal arguments.

        Raises: ContractError if the arguments do not fit the operation.
        """
        raise NotImplementedError("Abstract method")

    def collections(self, operation: str) -> tuple[str, ...]:
        """Private collections ``operation`` may write; only their member peers can endorse it."""
        return ()

    def invoke(self, stub: ChaincodeStub, operation: str, args: tuple) -> bytes:
        """
        Runs one operation against the stub.
        Args:
            stub: The execution view of the ledger.
            operation: The operation name.
            args: The proposal arguments.

        Returns: The operation's response bytes.
        """
        if operation not in self.operations():
            raise ContractError(f"contract {self.name!r} has no operation {operation!r}")
        self.check_args(operation, args)
        return getattr(self, operation)(stub, *args) or b""
